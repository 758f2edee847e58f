//! Max pooling and spatial pyramid pooling.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// 2x2 stride-2 max pool. Returns the pooled tensor and, per output cell,
/// the flat input index that won (first cell in row-major order on ties).
pub fn max_pool2d_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.chw()?;
    if h < 2 || w < 2 {
        return Err(TensorError::InvalidArgument {
            op: "max_pool2d",
            reason: format!("spatial dims must be at least 2, got {h}x{w}"),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.values();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for idx in [best + 1, best + w, best + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    let dims = if input.rank() == 3 {
        vec![c, ho, wo]
    } else {
        vec![ho, wo]
    };
    Ok((Tensor::from_parts_unchecked(dims, out), arg))
}

/// Output length of [`spp_forward`] for `channels` and `levels`.
pub fn spp_output_len(channels: usize, levels: &[usize]) -> usize {
    channels * levels.iter().map(|n| n * n).sum::<usize>()
}

fn cell_bounds(i: usize, n: usize, extent: usize) -> (usize, usize) {
    (i * extent / n, (i + 1) * extent / n)
}

/// Spatial pyramid max pooling over an `[C, H, W]` map.
///
/// Level `n` splits the map into `n x n` cells bounded at `floor(i*H/n)`.
/// Output order is level, then channel, then cell in row-major order.
pub fn spp_forward(input: &Tensor, levels: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.chw()?;
    if levels.is_empty() {
        return Err(TensorError::InvalidArgument {
            op: "spp",
            reason: "at least one pyramid level is required".into(),
        });
    }
    for &n in levels {
        if n == 0 || n > h || n > w {
            return Err(TensorError::InvalidArgument {
                op: "spp",
                reason: format!("level {n} does not fit a {h}x{w} map"),
            });
        }
    }
    let x = input.values();
    let len = spp_output_len(c, levels);
    let mut out = Vec::with_capacity(len);
    let mut arg = Vec::with_capacity(len);
    for &n in levels {
        for ch in 0..c {
            let base = ch * h * w;
            for cy in 0..n {
                let (y0, y1) = cell_bounds(cy, n, h);
                for cx in 0..n {
                    let (x0, x1) = cell_bounds(cx, n, w);
                    let mut best = base + y0 * w + x0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            let idx = base + y * w + xx;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor::from_parts_unchecked(vec![len], out), arg))
}

/// Scatter `grad_out` back onto the winning input cells.
pub(crate) fn route_grad(input_dims: &[usize], argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_dims);
    let gv = g.values_mut();
    for (&idx, &go) in argmax.iter().zip(grad_out.values()) {
        gv[idx] += go;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_picks_window_max() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = max_pool2d_forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1]);
        assert_eq!(y.values(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn pool_ties_break_to_first_in_scan_order() {
        let x = Tensor::full(&[1, 4, 4], 0.5);
        let (y, arg) = max_pool2d_forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2]);
        assert!(y.values().iter().all(|&v| v == 0.5));
        assert_eq!(arg, vec![0, 2, 8, 10]);
    }

    #[test]
    fn pool_floors_odd_extents() {
        let x = Tensor::zeros(&[2, 5, 7]);
        let (y, _) = max_pool2d_forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 2, 3]);
        assert!(max_pool2d_forward(&Tensor::zeros(&[1, 1, 4])).is_err());
    }

    #[test]
    fn spp_length_and_constants() {
        let x = Tensor::full(&[3, 13, 17], 0.7);
        let (y, _) = spp_forward(&x, &[1, 2, 4]).unwrap();
        assert_eq!(y.len(), 21 * 3);
        assert!(y.values().iter().all(|&v| v == 0.7));
        let (y2, _) = spp_forward(&Tensor::zeros(&[3, 32, 24]), &[1, 2, 4]).unwrap();
        assert_eq!(y2.len(), y.len());
    }

    #[test]
    fn spp_level_too_large() {
        assert!(spp_forward(&Tensor::zeros(&[1, 3, 8]), &[1, 4]).is_err());
    }
}
