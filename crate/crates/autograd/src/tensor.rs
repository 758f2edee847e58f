use crate::error::{Result, TensorError};

/// Dense row-major grid of `f64` values.
///
/// Image-like tensors are channel-first: `[C, H, W]`. Flat vectors use
/// `[N]` and batched logits `[M, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != values.len() {
            return Err(TensorError::Length {
                dims,
                expected,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                op: "Tensor::new",
                index,
            });
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Self {
        let n = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            values: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            dims: vec![1],
            values: vec![value],
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.values.len() == 1).then(|| self.values[0])
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != self.values.len() {
            return Err(TensorError::Length {
                dims: dims.to_vec(),
                expected,
                actual: self.values.len(),
            });
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    /// Interprets the tensor as `[C, H, W]`, promoting rank-2 grids to one channel.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match *self.dims.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            [h, w] => Ok((1, h, w)),
            _ => Err(TensorError::Rank {
                op: "chw",
                expected: 3,
                dims: self.dims.clone(),
            }),
        }
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), values.len());
        Self { dims, values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_dims() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        let err = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert_eq!(
            err,
            TensorError::NonFinite {
                op: "Tensor::new",
                index: 1
            }
        );
    }

    #[test]
    fn chw_promotes_rank_two() {
        let t = Tensor::zeros(&[4, 5]);
        assert_eq!(t.chw().unwrap(), (1, 4, 5));
        assert!(Tensor::zeros(&[4]).chw().is_err());
    }
}
