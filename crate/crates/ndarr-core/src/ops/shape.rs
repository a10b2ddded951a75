use crate::error::{dim_err, NdError, Result};
use crate::graph::{Graph, InputGrads, Op, Var};
use crate::tensor::Tensor;

impl Graph {
    /// Nearest-neighbour upsampling of `[B,C,H,W]` by an integer factor.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(NdError::Parameter(
                "upsample factor must be at least 1".into(),
            ));
        }
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 4 {
            return dim_err(format!("upsample expects [B,C,H,W], got {s:?}"));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = (h * factor, w * factor);
        let mut out = vec![0.0f32; planes * ho * wo];
        let xd = x.data();
        for p in 0..planes {
            for oy in 0..ho {
                let src = &xd[(p * h + oy / factor) * w..(p * h + oy / factor + 1) * w];
                let dst = &mut out[(p * ho + oy) * wo..(p * ho + oy + 1) * wo];
                for (ox, d) in dst.iter_mut().enumerate() {
                    *d = src[ox / factor];
                }
            }
        }
        let value = Tensor::new(vec![s[0], s[1], ho, wo], out)?;
        self.push(value, Op::Upsample { input, factor }, "upsample_nearest")
    }

    /// Top-left `h × w` window of every plane of a `[B,C,H,W]` tensor.
    pub fn crop(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || h > s[2] || w > s[3] {
            return dim_err(format!("cannot crop {s:?} to {h}x{w}"));
        }
        let xd = self.value(input).data();
        let mut out = Vec::with_capacity(s[0] * s[1] * h * w);
        for p in 0..s[0] * s[1] {
            for y in 0..h {
                let row = (p * s[2] + y) * s[3];
                out.extend_from_slice(&xd[row..row + w]);
            }
        }
        let value = Tensor::new(vec![s[0], s[1], h, w], out)?;
        self.push(value, Op::Crop { input }, "crop")
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push(value, Op::Reshape { input }, "reshape")
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| NdError::Dimension("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return dim_err(format!("concat axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != base.len()
                || s.iter()
                    .enumerate()
                    .any(|(d, &n)| d != axis && n != base[d])
            {
                return dim_err(format!("concat shape {s:?} incompatible with {base:?}"));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let chunk = self.shape(*v)[axis] * inner;
                out.extend_from_slice(&self.value(*v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// `input + bias` where `bias` matches the trailing axes of `input` and is
    /// repeated over the leading ones.
    pub fn add_broadcast(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(input), self.shape(bias));
        if bs.len() > xs.len() || xs[xs.len() - bs.len()..] != *bs {
            return dim_err(format!(
                "cannot broadcast {bs:?} over trailing axes of {xs:?}"
            ));
        }
        let bd = self.value(bias).data();
        let mut out = self.value(input).clone();
        for chunk in out.data_mut().chunks_exact_mut(bd.len()) {
            for (o, b) in chunk.iter_mut().zip(bd) {
                *o += b;
            }
        }
        self.push(out, Op::AddBroadcast { input, bias }, "add_broadcast")
    }

    /// `out[b,k] = Σ_m weights[b,m] · values[b,m,k]`.
    pub fn weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (ws, vs) = (self.shape(weights), self.shape(values));
        if ws.len() != 2 || vs.len() != 3 || ws[0] != vs[0] || ws[1] != vs[1] {
            return dim_err(format!(
                "weighted_sum weights {ws:?} do not index values {vs:?}"
            ));
        }
        let (b, m, k) = (vs[0], vs[1], vs[2]);
        let (wd, vd) = (self.value(weights).data(), self.value(values).data());
        let mut out = vec![0.0f32; b * k];
        for bi in 0..b {
            let dst = &mut out[bi * k..(bi + 1) * k];
            for mi in 0..m {
                let w = wd[bi * m + mi];
                let src = &vd[(bi * m + mi) * k..(bi * m + mi + 1) * k];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        let value = Tensor::new(vec![b, k], out)?;
        self.push(value, Op::WeightedSum { weights, values }, "weighted_sum")
    }
}

pub(crate) fn upsample_backward(
    shape: &[usize],
    input: Var,
    factor: usize,
    gout: &[f32],
) -> InputGrads {
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let wo = w * factor;
    let mut dx = vec![0.0f32; planes * h * w];
    for p in 0..planes {
        for oy in 0..h * factor {
            let src = &gout[(p * h * factor + oy) * wo..(p * h * factor + oy + 1) * wo];
            let dst = &mut dx[(p * h + oy / factor) * w..(p * h + oy / factor + 1) * w];
            for (ox, g) in src.iter().enumerate() {
                dst[ox / factor] += g;
            }
        }
    }
    vec![(input, dx)]
}

pub(crate) fn crop_backward(
    shape: &[usize],
    out: &[usize],
    input: Var,
    gout: &[f32],
) -> InputGrads {
    let (h, w) = (out[2], out[3]);
    let mut dx = vec![0.0f32; shape.iter().product()];
    for p in 0..shape[0] * shape[1] {
        for y in 0..h {
            let row = (p * shape[2] + y) * shape[3];
            dx[row..row + w].copy_from_slice(&gout[(p * h + y) * w..(p * h + y + 1) * w]);
        }
    }
    vec![(input, dx)]
}

pub(crate) fn concat_backward(
    graph: &Graph,
    inputs: &[Var],
    axis: usize,
    gout: &[f32],
) -> InputGrads {
    let base = graph.shape(inputs[0]);
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let total: usize = inputs.iter().map(|v| graph.shape(*v)[axis]).sum();
    let mut grads: InputGrads = Vec::with_capacity(inputs.len());
    let mut offset = 0;
    for v in inputs {
        let chunk = graph.shape(*v)[axis] * inner;
        if graph.needs(*v) {
            let mut g = Vec::with_capacity(outer * chunk);
            for o in 0..outer {
                let start = o * total * inner + offset;
                g.extend_from_slice(&gout[start..start + chunk]);
            }
            grads.push((*v, g));
        }
        offset += chunk;
    }
    grads
}

pub(crate) fn add_broadcast_backward(
    graph: &Graph,
    input: Var,
    bias: Var,
    gout: &[f32],
) -> InputGrads {
    let mut grads = Vec::with_capacity(2);
    if graph.needs(input) {
        grads.push((input, gout.to_vec()));
    }
    if graph.needs(bias) {
        let n = graph.value(bias).numel();
        let mut db = vec![0.0f64; n];
        for chunk in gout.chunks_exact(n) {
            for (d, g) in db.iter_mut().zip(chunk) {
                *d += *g as f64;
            }
        }
        grads.push((bias, db.into_iter().map(|v| v as f32).collect()));
    }
    grads
}

pub(crate) fn weighted_sum_backward(
    graph: &Graph,
    weights: Var,
    values: Var,
    gout: &[f32],
) -> InputGrads {
    let vs = graph.shape(values);
    let (b, m, k) = (vs[0], vs[1], vs[2]);
    let (wd, vd) = (graph.value(weights).data(), graph.value(values).data());
    let mut grads = Vec::with_capacity(2);
    if graph.needs(weights) {
        let mut dw = vec![0.0f32; b * m];
        for bi in 0..b {
            let g = &gout[bi * k..(bi + 1) * k];
            for mi in 0..m {
                let src = &vd[(bi * m + mi) * k..(bi * m + mi + 1) * k];
                dw[bi * m + mi] = src
                    .iter()
                    .zip(g)
                    .map(|(&s, &g)| s as f64 * g as f64)
                    .sum::<f64>() as f32;
            }
        }
        grads.push((weights, dw));
    }
    if graph.needs(values) {
        let mut dv = vec![0.0f32; b * m * k];
        for bi in 0..b {
            let g = &gout[bi * k..(bi + 1) * k];
            for mi in 0..m {
                let w = wd[bi * m + mi];
                for (d, gv) in dv[(bi * m + mi) * k..(bi * m + mi + 1) * k]
                    .iter_mut()
                    .zip(g)
                {
                    *d = w * gv;
                }
            }
        }
        grads.push((values, dv));
    }
    grads
}
