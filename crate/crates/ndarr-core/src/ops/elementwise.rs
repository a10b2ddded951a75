use crate::error::{dim_err, NdError, Result};
use crate::graph::{Graph, InputGrads, Op, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Sigmoid,
    Log,
    Neg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// How the operands of a binary op line up: equal shapes, or one side a
/// single value broadcast over the other.
#[derive(Clone, Copy)]
enum Pairing {
    Same,
    LhsScalar,
    RhsScalar,
}

fn pairing(lhs: &[usize], rhs: &[usize]) -> Result<Pairing> {
    let ln: usize = lhs.iter().product();
    let rn: usize = rhs.iter().product();
    if lhs == rhs {
        Ok(Pairing::Same)
    } else if rn == 1 {
        Ok(Pairing::RhsScalar)
    } else if ln == 1 {
        Ok(Pairing::LhsScalar)
    } else {
        dim_err(format!(
            "elementwise shapes {lhs:?} and {rhs:?} differ and neither is a scalar"
        ))
    }
}

impl Graph {
    pub fn unary(&mut self, input: Var, kind: UnaryKind) -> Result<Var> {
        let kinks = match kind {
            UnaryKind::Relu => self.take_kinks(self.value(input).numel())?,
            _ => None,
        };
        let x = self.value(input);
        let out = match kind {
            UnaryKind::Relu => match kinks {
                Some(mask) => Tensor::new(
                    x.shape().to_vec(),
                    x.data()
                        .iter()
                        .zip(&mask)
                        .map(|(&v, &m)| if m == 1 { v } else { 0.0 })
                        .collect(),
                )?,
                None => x.map(|v| v.max(0.0)),
            },
            UnaryKind::Sigmoid => x.map(sigmoid),
            UnaryKind::Neg => x.map(|v| -v),
            UnaryKind::Log => {
                if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0) {
                    return Err(NdError::Domain(format!("log of non-positive value {bad}")));
                }
                x.map(f32::ln)
            }
        };
        self.push(out, Op::Unary { input, kind }, "unary")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Log)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryKind::Neg)
    }

    pub fn binary(&mut self, lhs: Var, rhs: Var, kind: BinaryKind) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        let p = pairing(a.shape(), b.shape())?;
        let f = |x: f32, y: f32| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out = match p {
            Pairing::Same => {
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| f(x, y))
                    .collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Pairing::RhsScalar => {
                let y = b.item();
                a.map(|x| f(x, y))
            }
            Pairing::LhsScalar => {
                let x = a.item();
                b.map(|y| f(x, y))
            }
        };
        self.push(out, Op::Binary { lhs, rhs, kind }, "binary")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    /// `factor · x` for a constant factor.
    pub fn scale(&mut self, x: Var, factor: f32) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { input: x, factor }, "scale")
    }

    /// `x + value` for a constant value.
    pub fn add_scalar(&mut self, x: Var, value: f32) -> Result<Var> {
        let out = self.value(x).map(|v| v + value);
        self.push(out, Op::AddScalar { input: x }, "add_scalar")
    }

    /// Clips into `[lo, hi]`; the gradient is zero wherever clipping is active.
    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Result<Var> {
        if lo > hi {
            return Err(NdError::Parameter(format!("clamp bounds {lo} > {hi}")));
        }
        let kinks = self.take_kinks(self.value(x).numel())?;
        let t = self.value(x);
        let out = match kinks {
            Some(region) => Tensor::new(
                t.shape().to_vec(),
                t.data()
                    .iter()
                    .zip(&region)
                    .map(|(&v, &r)| [lo, v, hi][r as usize])
                    .collect(),
            )?,
            None => t.map(|v| v.clamp(lo, hi)),
        };
        self.push(out, Op::Clamp { input: x, lo, hi }, "clamp")
    }
}

pub(crate) fn unary_backward(
    x: &Tensor,
    out: &Tensor,
    input: Var,
    kind: UnaryKind,
    gout: &[f32],
) -> InputGrads {
    let g: Vec<f32> = match kind {
        UnaryKind::Relu => x
            .data()
            .iter()
            .zip(gout)
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
        UnaryKind::Sigmoid => out
            .data()
            .iter()
            .zip(gout)
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect(),
        UnaryKind::Log => x.data().iter().zip(gout).map(|(&v, &g)| g / v).collect(),
        UnaryKind::Neg => gout.iter().map(|g| -g).collect(),
    };
    vec![(input, g)]
}

pub(crate) fn binary_backward(
    graph: &Graph,
    lhs: Var,
    rhs: Var,
    kind: BinaryKind,
    gout: &[f32],
) -> InputGrads {
    let (a, b) = (graph.value(lhs), graph.value(rhs));
    let p = pairing(a.shape(), b.shape()).expect("validated in forward");
    // Per-element partials, expanded to the output's extent.
    let at = |t: &Tensor, i: usize| {
        if t.numel() == 1 {
            t.data()[0]
        } else {
            t.data()[i]
        }
    };
    let d_lhs: Vec<f32> = match kind {
        BinaryKind::Add | BinaryKind::Sub => gout.to_vec(),
        BinaryKind::Mul => gout.iter().enumerate().map(|(i, g)| g * at(b, i)).collect(),
    };
    let d_rhs: Vec<f32> = match kind {
        BinaryKind::Add => gout.to_vec(),
        BinaryKind::Sub => gout.iter().map(|g| -g).collect(),
        BinaryKind::Mul => gout.iter().enumerate().map(|(i, g)| g * at(a, i)).collect(),
    };
    let collapse = |v: Vec<f32>| vec![v.iter().map(|&x| x as f64).sum::<f64>() as f32];
    let mut grads = Vec::with_capacity(2);
    if graph.needs(lhs) {
        grads.push((
            lhs,
            if matches!(p, Pairing::LhsScalar) {
                collapse(d_lhs)
            } else {
                d_lhs
            },
        ));
    }
    if graph.needs(rhs) {
        grads.push((
            rhs,
            if matches!(p, Pairing::RhsScalar) {
                collapse(d_rhs)
            } else {
                d_rhs
            },
        ));
    }
    grads
}
