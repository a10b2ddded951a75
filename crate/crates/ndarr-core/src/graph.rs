use crate::error::{NdError, Result};
use crate::ops::elementwise::{BinaryKind, UnaryKind};
use crate::ops::reduce::ReduceKind;
use crate::ops::{conv, elementwise, linear, reduce, shape, softmax};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    LogSoftmax {
        input: Var,
        axis: usize,
    },
    Unary {
        input: Var,
        kind: UnaryKind,
    },
    Binary {
        lhs: Var,
        rhs: Var,
        kind: BinaryKind,
    },
    Scale {
        input: Var,
        factor: f32,
    },
    AddScalar {
        input: Var,
    },
    Clamp {
        input: Var,
        lo: f32,
        hi: f32,
    },
    Reduce {
        input: Var,
        kind: ReduceKind,
        axes: Vec<usize>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Reshape {
        input: Var,
    },
    Crop {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    AddBroadcast {
        input: Var,
        bias: Var,
    },
    WeightedSum {
        weights: Var,
        values: Var,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                ..
            } => vec![*input, *kernel, *bias],
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::Softmax { input, .. }
            | Op::LogSoftmax { input, .. }
            | Op::Unary { input, .. }
            | Op::Scale { input, .. }
            | Op::AddScalar { input }
            | Op::Clamp { input, .. }
            | Op::Reduce { input, .. }
            | Op::Upsample { input, .. }
            | Op::Reshape { input }
            | Op::Crop { input } => vec![*input],
            Op::Binary { lhs, rhs, .. } => vec![*lhs, *rhs],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::AddBroadcast { input, bias } => vec![*input, *bias],
            Op::WeightedSum { weights, values } => vec![*weights, *values],
        }
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Per-forward-pass record of operations.
///
/// Nodes are appended in evaluation order, which is a topological order of the
/// dataflow, so backward is a single reverse sweep. A graph is built for one
/// forward pass and dropped after its backward.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    frozen: Option<FrozenKinks>,
}

/// A recorded [`Graph::kink_pattern`] replayed in place of the sign tests of
/// relu and clamp.
struct FrozenKinks {
    pattern: Vec<u8>,
    cursor: usize,
}

/// Gradient contributions an op hands back to its inputs.
pub(crate) type InputGrads = Vec<(Var, Vec<f32>)>;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose relu and clamp ops take their pieces from `pattern`
    /// instead of from their inputs. Built the same way as the graph that
    /// recorded the pattern, it evaluates the smooth extension of that piece,
    /// whose derivative at the recording point is what backward computes.
    pub fn with_frozen_kinks(pattern: Vec<u8>) -> Self {
        Graph {
            frozen: Some(FrozenKinks { pattern, cursor: 0 }),
            ..Self::default()
        }
    }

    /// The next `n` pattern entries when frozen.
    pub(crate) fn take_kinks(&mut self, n: usize) -> Result<Option<Vec<u8>>> {
        let Some(f) = self.frozen.as_mut() else {
            return Ok(None);
        };
        let end = f.cursor + n;
        if end > f.pattern.len() {
            return Err(NdError::Parameter(format!(
                "frozen kink pattern has {} entries, graph needs at least {end}",
                f.pattern.len()
            )));
        }
        let piece = f.pattern[f.cursor..end].to_vec();
        f.cursor = end;
        Ok(Some(piece))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient during backward.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Which piece of each piecewise op every element landed on: the sign of
    /// relu inputs and the below/inside/above region of clamp inputs. Two
    /// evaluations with equal patterns lie on one smooth piece of the function.
    pub fn kink_pattern(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Unary {
                    input,
                    kind: UnaryKind::Relu,
                } => out.extend(self.value(*input).data().iter().map(|&v| (v > 0.0) as u8)),
                Op::Clamp { input, lo, hi } => out.extend(
                    self.value(*input)
                        .data()
                        .iter()
                        .map(|&v| (v > *lo) as u8 + (v >= *hi) as u8),
                ),
                _ => {}
            }
        }
        out
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated on `v` by the last [`Graph::backward`], if any.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| {
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone())
                .expect("gradient shape tracks value shape")
        })
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(NdError::NonFinite(name));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`. Leaves with `requires_grad` end up
    /// holding `d loss / d leaf`; intermediate gradients are released as soon
    /// as they have been propagated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(NdError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(gout) = self.grads[idx].take() else {
                continue;
            };
            let contributions = self.backward_op(idx, &gout)?;
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut self.grads[input.0] {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_op(&self, idx: usize, gout: &[f32]) -> Result<InputGrads> {
        let node = &self.nodes[idx];
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => conv::conv2d_backward(self, *input, *kernel, *bias, *stride, *padding, gout),
            Op::Linear {
                input,
                weight,
                bias,
            } => linear::linear_backward(self, *input, *weight, *bias, gout),
            Op::Softmax { input, axis } => softmax::softmax_backward(out, *input, *axis, gout),
            Op::LogSoftmax { input, axis } => {
                softmax::log_softmax_backward(out, *input, *axis, gout)
            }
            Op::Unary { input, kind } => {
                elementwise::unary_backward(self.value(*input), out, *input, *kind, gout)
            }
            Op::Binary { lhs, rhs, kind } => {
                elementwise::binary_backward(self, *lhs, *rhs, *kind, gout)
            }
            Op::Scale { input, factor } => {
                vec![(*input, gout.iter().map(|g| g * factor).collect())]
            }
            Op::AddScalar { input } => vec![(*input, gout.to_vec())],
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                let g = x
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > *lo && v < *hi { g } else { 0.0 })
                    .collect();
                vec![(*input, g)]
            }
            Op::Reduce { input, kind, axes } => {
                reduce::reduce_backward(self.value(*input).shape(), *input, *kind, axes, gout)
            }
            Op::Upsample { input, factor } => {
                shape::upsample_backward(self.value(*input).shape(), *input, *factor, gout)
            }
            Op::Reshape { input } => vec![(*input, gout.to_vec())],
            Op::Crop { input } => {
                shape::crop_backward(self.value(*input).shape(), out.shape(), *input, gout)
            }
            Op::Concat { inputs, axis } => shape::concat_backward(self, inputs, *axis, gout),
            Op::AddBroadcast { input, bias } => {
                shape::add_broadcast_backward(self, *input, *bias, gout)
            }
            Op::WeightedSum { weights, values } => {
                shape::weighted_sum_backward(self, *weights, *values, gout)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::ones(&[3]));
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(NdError::Contract(_))));
    }

    #[test]
    fn sum_gives_unit_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let loss = g.sum(x, &[0, 1]).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_gives_twice_input() {
        let mut g = Graph::new();
        let data = vec![1.0, -2.0, 3.0, 0.5];
        let x = g.param(Tensor::new(vec![4], data.clone()).unwrap());
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq, &[0]).unwrap();
        g.backward(loss).unwrap();
        let expected: Vec<f32> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.grad(x).unwrap().data(), &expected[..]);
    }

    #[test]
    fn shared_input_accumulates_and_constants_get_nothing() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full(&[2], 3.0));
        let c = g.constant(Tensor::full(&[2], 5.0));
        let a = g.mul(x, c).unwrap();
        let b = g.add(a, x).unwrap();
        let loss = g.sum(b, &[0]).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[6.0, 6.0]);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1], 1e30));
        let y = g.mul(x, x);
        assert!(matches!(y, Err(NdError::NonFinite(_))));
    }
}
