//! Gradient tape: records operator applications and replays them in reverse.

use std::fmt;

use crate::conv::{self, ConvSpec};
use crate::error::{Result, TensorError};
use crate::pool;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operator defined outside this crate.
///
/// `backward` returns one optional gradient per input, each with the dims of
/// the corresponding input.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Result<Vec<Option<Tensor>>>;
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weights: Var,
        bias: Var,
        spec: ConvSpec,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Spp {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Prelu {
        input: Var,
        slope: Var,
    },
    Sigmoid(Var),
    Softmax(Var),
    Linear {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Add(Var, Var),
    Concat(Vec<Var>),
    Sum(Var),
    WeightedSum(Vec<(Var, f64)>),
    Custom {
        op: Box<dyn CustomOp>,
        inputs: Vec<Var>,
    },
}

impl fmt::Debug for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool { .. } => "max_pool2d",
            Op::Spp { .. } => "spp",
            Op::Relu(_) => "relu",
            Op::Prelu { .. } => "prelu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Linear { .. } => "fully_connected",
            Op::Add(..) => "add",
            Op::Concat(_) => "concat",
            Op::Sum(_) => "sum",
            Op::WeightedSum(_) => "weighted_sum",
            Op::Custom { op, .. } => op.name(),
        };
        f.write_str(name)
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation graph for one forward pass.
///
/// Leaves created with [`Tape::param`] receive gradients on [`Tape::backward`].
/// A tape may be differentiated again only after [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        value.ensure_finite("param")?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        value.ensure_finite("constant")?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<&Tensor> {
        self.nodes
            .get(var.0)
            .map(|n| &n.value)
            .ok_or(TensorError::UnknownVar(var.0))
    }

    fn record(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        value.ensure_finite(name)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    pub fn conv2d(&mut self, input: Var, spec: ConvSpec, weights: Var, bias: Var) -> Result<Var> {
        let out = conv::conv2d_forward(self.check(input)?, &spec, self.check(weights)?, self.check(bias)?)?;
        self.record(
            "conv2d",
            out,
            Op::Conv2d {
                input,
                weights,
                bias,
                spec,
            },
            &[input, weights, bias],
        )
    }

    pub fn max_pool2d(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = pool::max_pool2d_forward(self.check(input)?)?;
        self.record("max_pool2d", out, Op::MaxPool { input, argmax }, &[input])
    }

    pub fn spp(&mut self, input: Var, levels: &[usize]) -> Result<Var> {
        let (out, argmax) = pool::spp_forward(self.check(input)?, levels)?;
        self.record("spp", out, Op::Spp { input, argmax }, &[input])
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.check(input)?;
        let vals = x.values().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::from_parts_unchecked(x.dims().to_vec(), vals);
        self.record("relu", out, Op::Relu(input), &[input])
    }

    /// Parametric ReLU with one slope per channel (axis 0), or a single shared slope.
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var> {
        let x = self.check(input)?;
        let a = self.check(slope)?;
        let per = prelu_stride(x, a)?;
        let vals = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v > 0.0 {
                    v
                } else {
                    a.values()[prelu_channel(i, per, a.len())] * v
                }
            })
            .collect();
        let out = Tensor::from_parts_unchecked(x.dims().to_vec(), vals);
        self.record("prelu", out, Op::Prelu { input, slope }, &[input, slope])
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let x = self.check(input)?;
        let vals = x.values().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor::from_parts_unchecked(x.dims().to_vec(), vals);
        self.record("sigmoid", out, Op::Sigmoid(input), &[input])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.check(input)?;
        let k = *x.dims().last().unwrap_or(&1);
        let mut vals = x.values().to_vec();
        for row in vals.chunks_mut(k.max(1)) {
            softmax_in_place(row);
        }
        let out = Tensor::from_parts_unchecked(x.dims().to_vec(), vals);
        self.record("softmax", out, Op::Softmax(input), &[input])
    }

    /// `weights · x + bias` with `weights` of dims `[out, in]`; `x` is read flat.
    pub fn fully_connected(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let x = self.check(input)?;
        let w = self.check(weights)?;
        let b = self.check(bias)?;
        let (n_out, n_in) = match w.dims() {
            &[o, i] => (o, i),
            d => {
                return Err(TensorError::Rank {
                    op: "fully_connected weights",
                    expected: 2,
                    dims: d.to_vec(),
                })
            }
        };
        if x.len() != n_in {
            return Err(TensorError::ShapeMismatch {
                op: "fully_connected",
                axis: "input length",
                expected: n_in,
                actual: x.len(),
            });
        }
        if b.len() != n_out {
            return Err(TensorError::ShapeMismatch {
                op: "fully_connected",
                axis: "bias length",
                expected: n_out,
                actual: b.len(),
            });
        }
        let vals = w
            .values()
            .chunks(n_in)
            .zip(b.values())
            .map(|(row, bias)| bias + row.iter().zip(x.values()).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let out = Tensor::from_parts_unchecked(vec![n_out], vals);
        self.record(
            "fully_connected",
            out,
            Op::Linear { input, weights, bias },
            &[input, weights, bias],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.check(a)?, self.check(b)?);
        same_dims("add", x, y)?;
        let vals = x.values().iter().zip(y.values()).map(|(p, q)| p + q).collect();
        let out = Tensor::from_parts_unchecked(x.dims().to_vec(), vals);
        self.record("add", out, Op::Add(a, b), &[a, b])
    }

    /// Concatenate `[C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "concat",
            reason: "nothing to concatenate".into(),
        })?;
        let (_, h, w) = self.check(*first)?.chw()?;
        let mut channels = 0;
        let mut vals = Vec::new();
        for &p in parts {
            let t = self.check(p)?;
            let (c, ph, pw) = t.chw()?;
            if ph != h {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    axis: "height",
                    expected: h,
                    actual: ph,
                });
            }
            if pw != w {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    axis: "width",
                    expected: w,
                    actual: pw,
                });
            }
            channels += c;
            vals.extend_from_slice(t.values());
        }
        let out = Tensor::from_parts_unchecked(vec![channels, h, w], vals);
        self.record("concat", out, Op::Concat(parts.to_vec()), parts)
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.check(input)?.sum();
        self.record("sum", Tensor::scalar(s), Op::Sum(input), &[input])
    }

    /// `Σ w_i · x_i` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms.first().ok_or_else(|| TensorError::InvalidArgument {
            op: "weighted_sum",
            reason: "no terms".into(),
        })?;
        let dims = self.check(first)?.dims().to_vec();
        let mut vals = vec![0.0; dims.iter().product()];
        for &(v, weight) in terms {
            let t = self.check(v)?;
            if t.dims() != dims.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "weighted_sum",
                    axis: "element count",
                    expected: vals.len(),
                    actual: t.len(),
                });
            }
            for (acc, x) in vals.iter_mut().zip(t.values()) {
                *acc += weight * x;
            }
        }
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let out = Tensor::from_parts_unchecked(dims, vals);
        self.record("weighted_sum", out, Op::WeightedSum(terms.to_vec()), &parents)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let name = op.name();
        let out = {
            let vals = inputs.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
            op.forward(&vals)?
        };
        self.record(
            name,
            out,
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
            inputs,
        )
    }

    /// Gradient of the last [`Tape::backward`] target with respect to `var`.
    pub fn grad(&self, var: Var) -> Option<&Tensor> {
        self.grads.as_ref()?.get(var.0)?.as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads = None;
    }

    /// Reverse-mode sweep from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(TensorError::GradientsPresent);
        }
        let lv = self.check(loss)?;
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.dims().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.dims(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for (parent, contrib) in self.local_grads(node, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                contrib.ensure_finite("backward")?;
                accumulate(&mut grads[parent.0], contrib);
            }
            grads[idx] = Some(g);
        }
        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && g.is_none() {
                *g = Some(Tensor::zeros(node.value.dims()));
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                weights,
                bias,
                spec,
            } => {
                let cg = conv::conv2d_backward(val(*input), spec, val(*weights), g)?;
                vec![(*input, cg.input), (*weights, cg.weights), (*bias, cg.bias)]
            }
            Op::MaxPool { input, argmax } | Op::Spp { input, argmax } => {
                vec![(*input, pool::route_grad(val(*input).dims(), argmax, g))]
            }
            Op::Relu(input) => {
                let x = val(*input);
                let vals = x
                    .values()
                    .iter()
                    .zip(g.values())
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                vec![(*input, Tensor::from_parts_unchecked(x.dims().to_vec(), vals))]
            }
            Op::Prelu { input, slope } => {
                let x = val(*input);
                let a = val(*slope);
                let per = prelu_stride(x, a)?;
                let mut gx = Vec::with_capacity(x.len());
                let mut ga = vec![0.0; a.len()];
                for (i, (&v, &gv)) in x.values().iter().zip(g.values()).enumerate() {
                    let ch = prelu_channel(i, per, a.len());
                    if v > 0.0 {
                        gx.push(gv);
                    } else {
                        gx.push(a.values()[ch] * gv);
                        ga[ch] += v * gv;
                    }
                }
                vec![
                    (*input, Tensor::from_parts_unchecked(x.dims().to_vec(), gx)),
                    (*slope, Tensor::from_parts_unchecked(a.dims().to_vec(), ga)),
                ]
            }
            Op::Sigmoid(input) => {
                let vals = out
                    .values()
                    .iter()
                    .zip(g.values())
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                vec![(*input, Tensor::from_parts_unchecked(out.dims().to_vec(), vals))]
            }
            Op::Softmax(input) => {
                let k = (*out.dims().last().unwrap_or(&1)).max(1);
                let mut vals = Vec::with_capacity(out.len());
                for (srow, grow) in out.values().chunks(k).zip(g.values().chunks(k)) {
                    let dot: f64 = srow.iter().zip(grow).map(|(s, gv)| s * gv).sum();
                    vals.extend(srow.iter().zip(grow).map(|(s, gv)| s * (gv - dot)));
                }
                vec![(*input, Tensor::from_parts_unchecked(out.dims().to_vec(), vals))]
            }
            Op::Linear { input, weights, bias } => {
                let x = val(*input);
                let w = val(*weights);
                let n_in = x.len();
                let mut gx = vec![0.0; n_in];
                let mut gw = Vec::new();
                let want_w = needs(*weights);
                if want_w {
                    gw.reserve(w.len());
                }
                for (row, &go) in w.values().chunks(n_in).zip(g.values()) {
                    for (acc, wv) in gx.iter_mut().zip(row) {
                        *acc += wv * go;
                    }
                    if want_w {
                        gw.extend(x.values().iter().map(|xv| xv * go));
                    }
                }
                let mut res = vec![
                    (*input, Tensor::from_parts_unchecked(x.dims().to_vec(), gx)),
                    (
                        *bias,
                        Tensor::from_parts_unchecked(val(*bias).dims().to_vec(), g.values().to_vec()),
                    ),
                ];
                if want_w {
                    res.push((*weights, Tensor::from_parts_unchecked(w.dims().to_vec(), gw)));
                }
                res
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Concat(parts) => {
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let t = val(p);
                    let slice = g.values()[offset..offset + t.len()].to_vec();
                    offset += t.len();
                    res.push((p, Tensor::from_parts_unchecked(t.dims().to_vec(), slice)));
                }
                res
            }
            Op::Sum(input) => {
                let x = val(*input);
                vec![(*input, Tensor::full(x.dims(), g.values()[0]))]
            }
            Op::WeightedSum(terms) => terms
                .iter()
                .map(|&(v, weight)| {
                    let vals = g.values().iter().map(|gv| gv * weight).collect();
                    (v, Tensor::from_parts_unchecked(g.dims().to_vec(), vals))
                })
                .collect(),
            Op::Custom { op, inputs } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                let grads = op.backward(&vals, out, g)?;
                if grads.len() != inputs.len() {
                    return Err(TensorError::InvalidArgument {
                        op: op.name(),
                        reason: format!(
                            "backward returned {} gradients for {} inputs",
                            grads.len(),
                            inputs.len()
                        ),
                    });
                }
                let mut res = Vec::new();
                for ((&v, t), grad) in inputs.iter().zip(&vals).zip(grads) {
                    if let Some(grad) = grad {
                        if grad.dims() != t.dims() {
                            return Err(TensorError::InvalidArgument {
                                op: op.name(),
                                reason: format!(
                                    "gradient dims {:?} differ from input dims {:?}",
                                    grad.dims(),
                                    t.dims()
                                ),
                            });
                        }
                        res.push((v, grad));
                    }
                }
                res
            }
        })
    }
}

fn accumulate(slot: &mut Option<Tensor>, contrib: Tensor) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.values_mut().iter_mut().zip(contrib.values()) {
                *a += c;
            }
        }
        None => *slot = Some(contrib),
    }
}

fn same_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() == b.dims() {
        return Ok(());
    }
    if a.rank() != b.rank() {
        return Err(TensorError::Rank {
            op,
            expected: a.rank(),
            dims: b.dims().to_vec(),
        });
    }
    let (expected, actual) = a
        .dims()
        .iter()
        .zip(b.dims())
        .find(|(x, y)| x != y)
        .map(|(x, y)| (*x, *y))
        .unwrap_or_default();
    Err(TensorError::ShapeMismatch {
        op,
        axis: "dims",
        expected,
        actual,
    })
}

// Elements per channel for prelu; the slope vector is either shared or per-channel.
fn prelu_stride(x: &Tensor, slope: &Tensor) -> Result<usize> {
    let channels = x.dims().first().copied().unwrap_or(1);
    match slope.len() {
        1 => Ok(x.len().max(1)),
        n if n == channels && channels > 0 => Ok(x.len() / channels),
        n => Err(TensorError::ShapeMismatch {
            op: "prelu",
            axis: "slope length",
            expected: channels,
            actual: n,
        }),
    }
}

fn prelu_channel(i: usize, per: usize, n_slopes: usize) -> usize {
    if n_slopes == 1 {
        0
    } else {
        i / per
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape
            .param(Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap())
            .unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn dead_relu_has_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(vec![-1.0, -0.3]).unwrap()).unwrap();
        let r = tape.relu(x).unwrap();
        let s = tape.sum(r).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn prelu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![-2.0, 3.0]).unwrap()).unwrap();
        let a = tape.constant(Tensor::scalar(0.25)).unwrap();
        let y = tape.prelu(x, a).unwrap();
        assert_eq!(tape.value(y).values(), &[-0.5, 3.0]);
        let zero = tape.constant(Tensor::scalar(0.0)).unwrap();
        let y0 = tape.prelu(x, zero).unwrap();
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(y0).values(), tape.value(r).values());
    }

    #[test]
    fn softmax_uniform_over_five() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[5], 3.7)).unwrap();
        let y = tape.softmax(x).unwrap();
        for &p in tape.value(y).values() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn fully_connected_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![1.0, 2.0]).unwrap()).unwrap();
        let w = tape.constant(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
        let b = tape.constant(Tensor::scalar(-1.0)).unwrap();
        let y = tape.fully_connected(x, w, b).unwrap();
        assert_eq!(tape.value(y).values(), &[10.0]);

        let eye = tape
            .constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let zb = tape.constant(Tensor::zeros(&[2])).unwrap();
        let y = tape.fully_connected(x, eye, zb).unwrap();
        assert_eq!(tape.value(y).values(), &[1.0, 2.0]);

        let zw = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
        let bb = tape.constant(Tensor::from_vec(vec![0.5, -7.0]).unwrap()).unwrap();
        let y = tape.fully_connected(x, zw, bb).unwrap();
        assert_eq!(tape.value(y).values(), &[0.5, -7.0]);

        let short = tape.constant(Tensor::scalar(1.0)).unwrap();
        assert!(tape.fully_connected(short, w, b).is_err());
    }

    #[test]
    fn add_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        let b = tape.constant(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
        let ab = tape.add(a, b).unwrap();
        let ba = tape.add(b, a).unwrap();
        assert_eq!(tape.value(ab).values(), &[4.0, 6.0]);
        assert_eq!(tape.value(ab), tape.value(ba));
        let z = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
        let az = tape.add(a, z).unwrap();
        assert_eq!(tape.value(az), tape.value(a));
        let c = tape.constant(Tensor::zeros(&[2, 1])).unwrap();
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn backward_requires_scalar_and_reset() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[3])).unwrap();
        assert_eq!(tape.backward(x), Err(TensorError::NonScalarLoss(vec![3])));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s), Err(TensorError::GradientsPresent));
        tape.zero_grad();
        tape.backward(s).unwrap();
    }

    #[test]
    fn unreachable_param_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0)).unwrap();
        let unused = tape.param(Tensor::zeros(&[2])).unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(unused).unwrap(), &Tensor::zeros(&[2]));
    }

    #[test]
    fn tied_use_accumulates() {
        // w used at two sites receives the sum of both contributions
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::new(vec![1, 3, 3], (0..9).map(|v| v as f64 / 4.0).collect()).unwrap())
            .unwrap();
        let w = tape.param(Tensor::full(&[1, 1, 3, 3], 0.1)).unwrap();
        let b = tape.constant(Tensor::zeros(&[1])).unwrap();
        let spec = ConvSpec::same(3, 1, 1, 1);
        let y1 = tape.conv2d(x, spec, w, b).unwrap();
        let y2 = tape.conv2d(y1, spec, w, b).unwrap();
        let s = tape.sum(y2).unwrap();
        tape.backward(s).unwrap();
        let tied = tape.grad(w).unwrap().clone();

        let mut untied = Tape::new();
        let x = untied.constant(tape.value(x).clone()).unwrap();
        let w1 = untied.param(Tensor::full(&[1, 1, 3, 3], 0.1)).unwrap();
        let w2 = untied.param(Tensor::full(&[1, 1, 3, 3], 0.1)).unwrap();
        let b = untied.constant(Tensor::zeros(&[1])).unwrap();
        let y1 = untied.conv2d(x, spec, w1, b).unwrap();
        let y2 = untied.conv2d(y1, spec, w2, b).unwrap();
        let s = untied.sum(y2).unwrap();
        untied.backward(s).unwrap();
        let g1 = untied.grad(w1).unwrap().values();
        let g2 = untied.grad(w2).unwrap().values();
        for ((t, a), b) in tied.values().iter().zip(g1).zip(g2) {
            assert!((t - (a + b)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(1e308)).unwrap();
        let err = tape.weighted_sum(&[(x, 10.0)]).unwrap_err();
        assert!(matches!(err, TensorError::NonFinite { op: "weighted_sum", .. }));
    }
}
