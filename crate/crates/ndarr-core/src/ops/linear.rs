use crate::error::{dim_err, Result};
use crate::graph::{Graph, InputGrads, Op, Var};
use crate::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

impl Graph {
    /// `input [B,F] · weight [F,G] + bias [G]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(input), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return dim_err(format!(
                "linear shapes {xs:?} · {ws:?} + {bs:?} do not agree"
            ));
        }
        let (b, f, gdim) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0f32; b * gdim];
        let bias_v = self.value(bias).data();
        for row in out.chunks_exact_mut(gdim) {
            row.copy_from_slice(bias_v);
        }
        gemm(
            b,
            f,
            gdim,
            MatRef::rows(self.value(input).data(), f),
            MatRef::rows(self.value(weight).data(), gdim),
            1.0,
            &mut out,
        );
        let value = Tensor::new(vec![b, gdim], out)?;
        self.push(
            value,
            Op::Linear {
                input,
                weight,
                bias,
            },
            "linear",
        )
    }
}

pub(crate) fn linear_backward(
    graph: &Graph,
    input: Var,
    weight: Var,
    bias: Var,
    gout: &[f32],
) -> InputGrads {
    let (b, f) = (graph.shape(input)[0], graph.shape(input)[1]);
    let gdim = graph.shape(weight)[1];
    let mut grads = Vec::with_capacity(3);
    if graph.needs(input) {
        let mut dx = vec![0.0f32; b * f];
        gemm(
            b,
            gdim,
            f,
            MatRef::rows(gout, gdim),
            MatRef::transposed(graph.value(weight).data(), gdim),
            0.0,
            &mut dx,
        );
        grads.push((input, dx));
    }
    if graph.needs(weight) {
        let mut dw = vec![0.0f32; f * gdim];
        gemm(
            f,
            b,
            gdim,
            MatRef::transposed(graph.value(input).data(), f),
            MatRef::rows(gout, gdim),
            0.0,
            &mut dw,
        );
        grads.push((weight, dw));
    }
    if graph.needs(bias) {
        let mut db = vec![0.0f64; gdim];
        for row in gout.chunks_exact(gdim) {
            for (d, g) in db.iter_mut().zip(row) {
                *d += *g as f64;
            }
        }
        grads.push((bias, db.into_iter().map(|v| v as f32).collect()));
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn run(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (xv, wv, bv) = (
            g.constant(x.clone()),
            g.constant(w.clone()),
            g.constant(b.clone()),
        );
        let y = g.linear(xv, wv, bv)?;
        Ok(g.value(y).clone())
    }

    #[test]
    fn identity_weight_returns_input() {
        let mut rng = RngStream::new(1);
        let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        assert_eq!(run(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn zero_weight_yields_bias_rows() {
        let x = Tensor::ones(&[3, 2]);
        let b = Tensor::new(vec![4], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let y = run(&x, &Tensor::zeros(&[2, 4]), &b).unwrap();
        for row in y.data().chunks(4) {
            assert_eq!(row, b.data());
        }
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = RngStream::new(5);
        let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let b = Tensor::randn(&[4], 1.0, &mut rng);
        let y = run(&x, &w, &b).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = b.data()[j] as f64;
                for k in 0..3 {
                    acc += x.data()[i * 3 + k] as f64 * w.data()[k * 4 + j] as f64;
                }
                assert!((y.data()[i * 4 + j] as f64 - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn inner_dimension_mismatch() {
        assert!(run(
            &Tensor::zeros(&[2, 3]),
            &Tensor::zeros(&[2, 4]),
            &Tensor::zeros(&[4])
        )
        .is_err());
    }
}
