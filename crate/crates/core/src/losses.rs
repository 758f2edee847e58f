//! Training objectives: Euclidean density loss, soft dice segmentation loss,
//! count-class cross-entropy, and their weighted total.
//!
//! Each loss exists twice over the same arithmetic: a plain function on
//! tensors and a [`CustomOp`] that records it on a [`Tape`].

use segcrowd_autograd::{CustomOp, Tape, Tensor, TensorError, Var};

use crate::error::{Error, Result};

pub const DICE_EPSILON: f64 = 1e-6;
pub const DEFAULT_LAMBDA1: f64 = 0.01;

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> std::result::Result<(), TensorError> {
    if a.len() != b.len() || a.dims() != b.dims() {
        return Err(TensorError::InvalidArgument {
            op,
            reason: format!(
                "prediction dims {:?} differ from ground truth dims {:?}",
                a.dims(),
                b.dims()
            ),
        });
    }
    Ok(())
}

/// `(1 / 2U) Σ (pred - gt)²` with `U` the number of ground-truth pixels.
struct Euclidean;

impl CustomOp for Euclidean {
    fn name(&self) -> &'static str {
        "l_euclidean"
    }

    fn forward(&self, inputs: &[&Tensor]) -> std::result::Result<Tensor, TensorError> {
        let (p, g) = (inputs[0], inputs[1]);
        same_dims("l_euclidean", p, g)?;
        let u = g.len() as f64;
        let ss: f64 = p.values().iter().zip(g.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(Tensor::scalar(ss / (2.0 * u)))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _out: &Tensor,
        grad: &Tensor,
    ) -> std::result::Result<Vec<Option<Tensor>>, TensorError> {
        let (p, g) = (inputs[0], inputs[1]);
        let scale = grad.values()[0] / g.len() as f64;
        let dp: Vec<f64> = p
            .values()
            .iter()
            .zip(g.values())
            .map(|(a, b)| scale * (a - b))
            .collect();
        let dg = dp.iter().map(|v| -v).collect();
        Ok(vec![
            Some(Tensor::new(p.dims().to_vec(), dp)?),
            Some(Tensor::new(g.dims().to_vec(), dg)?),
        ])
    }
}

struct DiceParts {
    overlap: f64,
    denom: f64,
}

fn dice_parts(p: &Tensor, g: &Tensor) -> DiceParts {
    let mut overlap = 0.0;
    let mut pp = 0.0;
    let mut gg = 0.0;
    for (a, b) in p.values().iter().zip(g.values()) {
        overlap += a * b;
        pp += a * a;
        gg += b * b;
    }
    DiceParts {
        overlap: 2.0 * overlap + DICE_EPSILON,
        denom: pp + gg + DICE_EPSILON,
    }
}

fn check_unit_interval(t: &Tensor) -> std::result::Result<(), TensorError> {
    match t.values().iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(TensorError::InvalidArgument {
            op: "dice",
            reason: format!("ground truth value {} at index {i} lies outside [0, 1]", t.values()[i]),
        }),
        None => Ok(()),
    }
}

/// `1 - (2 Σ p g + ε) / (Σ p² + Σ g² + ε)`.
struct DiceLoss;

impl CustomOp for DiceLoss {
    fn name(&self) -> &'static str {
        "l_seg"
    }

    fn forward(&self, inputs: &[&Tensor]) -> std::result::Result<Tensor, TensorError> {
        let (p, g) = (inputs[0], inputs[1]);
        same_dims("dice", p, g)?;
        check_unit_interval(g)?;
        let d = dice_parts(p, g);
        Ok(Tensor::scalar(1.0 - d.overlap / d.denom))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _out: &Tensor,
        grad: &Tensor,
    ) -> std::result::Result<Vec<Option<Tensor>>, TensorError> {
        let (p, g) = (inputs[0], inputs[1]);
        let d = dice_parts(p, g);
        let up = grad.values()[0];
        let b2 = d.denom * d.denom;
        // dD/dp_i = (2 g_i B - 2 p_i A) / B², and the loss is 1 - D
        let dp = p
            .values()
            .iter()
            .zip(g.values())
            .map(|(pi, gi)| -up * (2.0 * gi * d.denom - 2.0 * pi * d.overlap) / b2)
            .collect();
        let dg = p
            .values()
            .iter()
            .zip(g.values())
            .map(|(pi, gi)| -up * (2.0 * pi * d.denom - 2.0 * gi * d.overlap) / b2)
            .collect();
        Ok(vec![
            Some(Tensor::new(p.dims().to_vec(), dp)?),
            Some(Tensor::new(g.dims().to_vec(), dg)?),
        ])
    }
}

/// Mean negative log-likelihood of 0-based `targets` under softmax(logits).
struct CrossEntropy {
    targets: Vec<usize>,
}

impl CrossEntropy {
    fn rows<'a>(&self, logits: &'a Tensor) -> std::result::Result<std::slice::Chunks<'a, f64>, TensorError> {
        let m = self.targets.len();
        if m == 0 || !logits.len().is_multiple_of(m) {
            return Err(TensorError::InvalidArgument {
                op: "l_cla",
                reason: format!("{} logits cannot be split into {m} samples", logits.len()),
            });
        }
        let k = logits.len() / m;
        if let Some(&t) = self.targets.iter().find(|&&t| t >= k) {
            return Err(TensorError::InvalidArgument {
                op: "l_cla",
                reason: format!("target class {} is outside 1..={k}", t + 1),
            });
        }
        Ok(logits.values().chunks(k))
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

impl CustomOp for CrossEntropy {
    fn name(&self) -> &'static str {
        "l_cla"
    }

    fn forward(&self, inputs: &[&Tensor]) -> std::result::Result<Tensor, TensorError> {
        let rows = self.rows(inputs[0])?;
        let m = self.targets.len() as f64;
        let nll: f64 = rows.zip(&self.targets).map(|(row, &t)| -log_softmax(row)[t]).sum();
        Ok(Tensor::scalar(nll / m))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _out: &Tensor,
        grad: &Tensor,
    ) -> std::result::Result<Vec<Option<Tensor>>, TensorError> {
        let logits = inputs[0];
        let scale = grad.values()[0] / self.targets.len() as f64;
        let mut g = Vec::with_capacity(logits.len());
        for (row, &t) in self.rows(logits)?.zip(&self.targets) {
            for (j, lp) in log_softmax(row).into_iter().enumerate() {
                let onehot = if j == t { 1.0 } else { 0.0 };
                g.push(scale * (lp.exp() - onehot));
            }
        }
        Ok(vec![Some(Tensor::new(logits.dims().to_vec(), g)?)])
    }
}

fn eval(op: &dyn CustomOp, inputs: &[&Tensor]) -> Result<f64> {
    Ok(op.forward(inputs)?.values()[0])
}

fn zero_based(classes: &[usize]) -> Result<Vec<usize>> {
    classes
        .iter()
        .map(|&c| {
            c.checked_sub(1)
                .ok_or_else(|| Error::invalid("count classes are 1-based; got 0"))
        })
        .collect()
}

/// Euclidean density loss, used for both the intermediate and the final map.
pub fn l_euclidean(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    eval(&Euclidean, &[pred, gt])
}

/// Soft dice coefficient with `ε = 1e-6` smoothing.
pub fn dice(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    same_dims("dice", pred, gt)?;
    check_unit_interval(gt)?;
    let d = dice_parts(pred, gt);
    Ok(d.overlap / d.denom)
}

pub fn l_seg(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    eval(&DiceLoss, &[pred, gt])
}

/// Cross-entropy over `M` samples; `logits` holds `M x K` values and
/// `target_classes` are 1-based.
pub fn l_cla(logits: &Tensor, target_classes: &[usize]) -> Result<f64> {
    eval(
        &CrossEntropy {
            targets: zero_based(target_classes)?,
        },
        &[logits],
    )
}

pub fn euclidean_on_tape(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    Ok(tape.custom(Box::new(Euclidean), &[pred, gt])?)
}

pub fn l_seg_on_tape(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    Ok(tape.custom(Box::new(DiceLoss), &[pred, gt])?)
}

pub fn l_cla_on_tape(tape: &mut Tape, logits: Var, target_classes: &[usize]) -> Result<Var> {
    let op = CrossEntropy {
        targets: zero_based(target_classes)?,
    };
    Ok(tape.custom(Box::new(op), &[logits])?)
}

/// All loss terms of one forward pass. Disabled terms are recorded as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_int: f64,
    pub l_den: f64,
    pub l_seg: f64,
    pub l_cla: f64,
    pub l_fin: f64,
    pub lambda1: f64,
}

impl LossBreakdown {
    pub fn new(l_den: f64, l_int: f64, l_seg: f64, l_cla: f64, lambda1: f64) -> Self {
        Self {
            l_int,
            l_den,
            l_seg,
            l_cla,
            l_fin: l_fin(l_den, l_int, l_seg, l_cla, lambda1),
            lambda1,
        }
    }
}

/// `l_den + l_int + l_seg + λ₁ · l_cla`.
pub fn l_fin(l_den: f64, l_int: f64, l_seg: f64, l_cla: f64, lambda1: f64) -> f64 {
    l_den + l_int + l_seg + lambda1 * l_cla
}
