//! Dilated 2-D convolution kernels (zero padding, cross-correlation form).

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dilation: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, padding chosen so odd kernels preserve the spatial size.
    pub fn same(kernel: usize, in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            in_channels,
            out_channels,
            dilation,
            stride: 1,
            padding: dilation * (kernel.saturating_sub(1)) / 2,
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(TensorError::InvalidArgument {
                op: "conv2d",
                reason: reason.to_string(),
            })
        };
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return bad("kernel extent must be at least 1");
        }
        if self.dilation == 0 {
            return bad("dilation must be at least 1");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be at least 1");
        }
        Ok(())
    }

    /// `floor((in + 2p - d(k-1) - 1)/s) + 1`, required to be at least 1.
    pub fn output_extent(&self, input: usize, kernel: usize, axis: &'static str) -> Result<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if padded < span {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                reason: format!(
                    "{axis} extent {input} with padding {} is smaller than the effective kernel {span}",
                    self.padding
                ),
            });
        }
        Ok((padded - span) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            self.output_extent(h, self.kernel_h, "height")?,
            self.output_extent(w, self.kernel_w, "width")?,
        ))
    }

    // Output indices o whose tap o*stride + k*dilation - padding lands in [0, extent).
    fn valid_range(&self, tap: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let offset = (tap * self.dilation) as isize - self.padding as isize;
        let s = self.stride as isize;
        let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
        let hi_excl = (extent as isize - 1 - offset).div_euclid(s) + 1;
        let hi = hi_excl.clamp(0, out_extent as isize);
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }
}

pub(crate) fn check_shapes(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize, usize)> {
    spec.validate()?;
    let (c, h, w) = input.chw()?;
    if c != spec.in_channels {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            axis: "input channels",
            expected: spec.in_channels,
            actual: c,
        });
    }
    let expected = spec.weight_dims();
    if weights.rank() != 4 {
        return Err(TensorError::Rank {
            op: "conv2d weights",
            expected: 4,
            dims: weights.dims().to_vec(),
        });
    }
    let names = [
        "weight out_channels",
        "weight in_channels",
        "weight kernel_h",
        "weight kernel_w",
    ];
    for ((&e, &a), axis) in expected.iter().zip(weights.dims()).zip(names) {
        if e != a {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                axis,
                expected: e,
                actual: a,
            });
        }
    }
    if bias.len() != spec.out_channels {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            axis: "bias length",
            expected: spec.out_channels,
            actual: bias.len(),
        });
    }
    Ok((c, h, w))
}

/// Forward convolution. `input` is `[C, H, W]` (or `[H, W]` for one channel).
pub fn conv2d_forward(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, h, w) = check_shapes(input, spec, weights, bias)?;
    let (ho, wo) = spec.output_hw(h, w)?;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let x = input.values();
    let wt = weights.values();
    let mut out = vec![0.0; spec.out_channels * ho * wo];
    for (o, plane) in out.chunks_mut(ho * wo).enumerate() {
        plane.fill(bias.values()[o]);
        for ci in 0..c_in {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..kh {
                let (oy_lo, oy_hi) = spec.valid_range(ki, h, ho);
                for kj in 0..kw {
                    let weight = wt[((o * c_in + ci) * kh + ki) * kw + kj];
                    if weight == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = spec.valid_range(kj, w, wo);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * spec.stride + ki * spec.dilation - spec.padding;
                        let row = &src[iy * w..(iy + 1) * w];
                        let dst = &mut plane[oy * wo..(oy + 1) * wo];
                        if spec.stride == 1 {
                            let ix0 = ox_lo + kj * spec.dilation - spec.padding;
                            for (d, s) in dst[ox_lo..ox_hi].iter_mut().zip(&row[ix0..]) {
                                *d += weight * s;
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate().take(ox_hi).skip(ox_lo) {
                                let ix = ox * spec.stride + kj * spec.dilation - spec.padding;
                                *d += weight * row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![spec.out_channels, ho, wo], out))
}

/// Gradients of a convolution with respect to input, weights and bias.
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(input: &Tensor, spec: &ConvSpec, weights: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let (c_in, h, w) = input.chw()?;
    let (ho, wo) = spec.output_hw(h, w)?;
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let x = input.values();
    let wt = weights.values();
    let g = grad_out.values();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; spec.out_channels];
    for o in 0..spec.out_channels {
        let gplane = &g[o * ho * wo..(o + 1) * ho * wo];
        gb[o] = gplane.iter().sum();
        for ci in 0..c_in {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            let gsrc = &mut gx[ci * h * w..(ci + 1) * h * w];
            for ki in 0..kh {
                let (oy_lo, oy_hi) = spec.valid_range(ki, h, ho);
                for kj in 0..kw {
                    let widx = ((o * c_in + ci) * kh + ki) * kw + kj;
                    let weight = wt[widx];
                    let (ox_lo, ox_hi) = spec.valid_range(kj, w, wo);
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * spec.stride + ki * spec.dilation - spec.padding;
                        let grow = &gplane[oy * wo..(oy + 1) * wo];
                        if spec.stride == 1 {
                            let ix0 = ox_lo + kj * spec.dilation - spec.padding;
                            let n = ox_hi - ox_lo;
                            let srow = &src[iy * w + ix0..iy * w + ix0 + n];
                            let gsrow = &mut gsrc[iy * w + ix0..iy * w + ix0 + n];
                            for ((gs, s), gv) in gsrow.iter_mut().zip(srow).zip(&grow[ox_lo..ox_hi]) {
                                acc += gv * s;
                                *gs += weight * gv;
                            }
                        } else {
                            for (ox, &gv) in grow.iter().enumerate().take(ox_hi).skip(ox_lo) {
                                let ix = ox * spec.stride + kj * spec.dilation - spec.padding;
                                acc += gv * src[iy * w + ix];
                                gsrc[iy * w + ix] += weight * gv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_parts_unchecked(input.dims().to_vec(), gx),
        weights: Tensor::from_parts_unchecked(weights.dims().to_vec(), gw),
        bias: Tensor::from_parts_unchecked(vec![spec.out_channels], gb),
    })
}
