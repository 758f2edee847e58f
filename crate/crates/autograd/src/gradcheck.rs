//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward closure, so it stays
//! independent of every backward implementation it is used to verify.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Central-difference step `h`.
    pub step: f64,
    /// Denominator floor so exact zeros compare on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

impl GradCheck {
    /// Compare tape gradients of `f` against central differences for every
    /// element of every input. `f` must return a one-element tensor.
    pub fn run<F>(&self, inputs: &[Tensor], f: F) -> Result<GradReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        let eval = |values: &[Tensor]| -> Result<f64> {
            let mut tape = Tape::new();
            let vars = values
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect::<Result<Vec<_>>>()?;
            let out = f(&mut tape, &vars)?;
            tape.value(out)
                .item()
                .ok_or_else(|| TensorError::NonScalarLoss(tape.value(out).dims().to_vec()))
        };

        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        tape.backward(out)?;
        let analytic: Vec<Tensor> = vars
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).dims()))
            })
            .collect();

        let mut work: Vec<Tensor> = inputs.to_vec();
        let mut numeric = Vec::with_capacity(inputs.len());
        let mut max_rel_error = 0.0;
        let mut worst = (0, 0);
        for which in 0..inputs.len() {
            let mut grad = Tensor::zeros(inputs[which].dims());
            for idx in 0..inputs[which].len() {
                let orig = inputs[which].values()[idx];
                work[which].values_mut()[idx] = orig + self.step;
                let plus = eval(&work)?;
                work[which].values_mut()[idx] = orig - self.step;
                let minus = eval(&work)?;
                work[which].values_mut()[idx] = orig;
                let n = (plus - minus) / (2.0 * self.step);
                grad.values_mut()[idx] = n;
                let err = rel_error(analytic[which].values()[idx], n, self.floor);
                if err > max_rel_error {
                    max_rel_error = err;
                    worst = (which, idx);
                }
            }
            numeric.push(grad);
        }
        Ok(GradReport {
            max_rel_error,
            worst,
            analytic,
            numeric,
        })
    }
}
