use crate::error::{dim_err, Result};
use crate::graph::{Graph, InputGrads, Op, Var};
use crate::tensor::Tensor;

/// `(outer, len, inner)` so that element `(o, i, j)` sits at `(o*len + i)*inner + j`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return dim_err(format!("axis {axis} out of range for shape {shape:?}"));
    }
    Ok(())
}

/// Max-shifted log-normalizer of one lane, accumulated in f64.
fn lane_lse(x: &[f32], base: usize, len: usize, inner: usize) -> (f64, f64) {
    let mut max = f64::NEG_INFINITY;
    for i in 0..len {
        max = max.max(x[base + i * inner] as f64);
    }
    let mut sum = 0.0f64;
    for i in 0..len {
        sum += (x[base + i * inner] as f64 - max).exp();
    }
    (max, sum)
}

impl Graph {
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let x = self.value(input);
        check_axis(x.shape(), axis)?;
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![0.0f32; xd.len()];
        for o in 0..outer {
            for j in 0..inner {
                let base = o * len * inner + j;
                let (max, sum) = lane_lse(xd, base, len, inner);
                for i in 0..len {
                    let k = base + i * inner;
                    out[k] = ((xd[k] as f64 - max).exp() / sum) as f32;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.push(value, Op::Softmax { input, axis }, "softmax")
    }

    pub fn log_softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let x = self.value(input);
        check_axis(x.shape(), axis)?;
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let xd = x.data();
        let mut out = vec![0.0f32; xd.len()];
        for o in 0..outer {
            for j in 0..inner {
                let base = o * len * inner + j;
                let (max, sum) = lane_lse(xd, base, len, inner);
                let lse = max + sum.ln();
                for i in 0..len {
                    let k = base + i * inner;
                    out[k] = (xd[k] as f64 - lse) as f32;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        self.push(value, Op::LogSoftmax { input, axis }, "log_softmax")
    }
}

pub(crate) fn softmax_backward(out: &Tensor, input: Var, axis: usize, gout: &[f32]) -> InputGrads {
    let (outer, len, inner) = split_axis(out.shape(), axis);
    let y = out.data();
    let mut dx = vec![0.0f32; y.len()];
    for o in 0..outer {
        for j in 0..inner {
            let base = o * len * inner + j;
            let dot: f64 = (0..len)
                .map(|i| y[base + i * inner] as f64 * gout[base + i * inner] as f64)
                .sum();
            for i in 0..len {
                let k = base + i * inner;
                dx[k] = (y[k] as f64 * (gout[k] as f64 - dot)) as f32;
            }
        }
    }
    vec![(input, dx)]
}

pub(crate) fn log_softmax_backward(
    out: &Tensor,
    input: Var,
    axis: usize,
    gout: &[f32],
) -> InputGrads {
    let (outer, len, inner) = split_axis(out.shape(), axis);
    let y = out.data();
    let mut dx = vec![0.0f32; y.len()];
    for o in 0..outer {
        for j in 0..inner {
            let base = o * len * inner + j;
            let gsum: f64 = (0..len).map(|i| gout[base + i * inner] as f64).sum();
            for i in 0..len {
                let k = base + i * inner;
                dx[k] = (gout[k] as f64 - (y[k] as f64).exp() * gsum) as f32;
            }
        }
    }
    vec![(input, dx)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn softmax_of(t: Tensor, axis: usize) -> Tensor {
        let mut g = Graph::new();
        let x = g.constant(t);
        let y = g.softmax(x, axis).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn uniform_input() {
        let y = softmax_of(Tensor::full(&[3], 4.2), 0);
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn closed_form_pair() {
        let y = softmax_of(Tensor::new(vec![2], vec![0.0, 3f32.ln()]).unwrap(), 0);
        assert!((y.data()[0] - 0.25).abs() < 1e-7);
        assert!((y.data()[1] - 0.75).abs() < 1e-7);
    }

    #[test]
    fn random_vector_vs_extended_precision() {
        let mut rng = RngStream::new(9);
        let x = Tensor::randn(&[7], 2.0, &mut rng);
        let y = softmax_of(x.clone(), 0);
        let denom: f64 = x.data().iter().map(|&v| (v as f64).exp()).sum();
        for (xv, yv) in x.data().iter().zip(y.data()) {
            assert!(((*xv as f64).exp() / denom - *yv as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn large_magnitudes_stay_normalized() {
        let x = Tensor::new(vec![2, 3], vec![100.0, -100.0, 99.0, -100.0, 100.0, 0.0]).unwrap();
        for axis in 0..2 {
            let y = softmax_of(x.clone(), axis);
            assert!(y.is_finite());
        }
        let y = softmax_of(x, 1);
        for row in y.data().chunks(3) {
            assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn log_softmax_agrees_with_log_of_softmax() {
        let mut rng = RngStream::new(2);
        let x = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let s = softmax_of(x.clone(), 1);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let l = g.log_softmax(xv, 1).unwrap();
        for (a, b) in g.value(l).data().iter().zip(s.data()) {
            assert!((a - b.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn bad_axis() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 2]));
        assert!(g.softmax(x, 2).is_err());
    }
}
