use crate::error::{dim_err, Result};
use crate::graph::{Graph, InputGrads, Op, Var};
use crate::tensor::{strides, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// For every input position, the flat index of the output cell it feeds.
fn output_index_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(d, _)| !axes.contains(d))
        .map(|(_, &n)| n)
        .collect();
    let out_strides = strides(&out_shape);
    let mut per_axis = Vec::with_capacity(shape.len());
    let mut k = 0;
    for d in 0..shape.len() {
        if axes.contains(&d) {
            per_axis.push(0);
        } else {
            per_axis.push(out_strides[k]);
            k += 1;
        }
    }
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut counter = vec![0usize; shape.len()];
    let mut cur = 0usize;
    for _ in 0..numel {
        map.push(cur);
        for d in (0..shape.len()).rev() {
            counter[d] += 1;
            cur += per_axis[d];
            if counter[d] < shape[d] {
                break;
            }
            cur -= per_axis[d] * counter[d];
            counter[d] = 0;
        }
    }
    (out_shape, map)
}

fn validate_axes(shape: &[usize], axes: &[usize]) -> Result<()> {
    for (i, &a) in axes.iter().enumerate() {
        if a >= shape.len() {
            return dim_err(format!("reduce axis {a} out of range for {shape:?}"));
        }
        if axes[..i].contains(&a) {
            return dim_err(format!("reduce axis {a} listed twice"));
        }
    }
    Ok(())
}

fn count(shape: &[usize], axes: &[usize]) -> usize {
    axes.iter().map(|&a| shape[a]).product()
}

impl Graph {
    /// Sums or averages over `axes`, dropping them from the shape. An empty
    /// axis list is the identity.
    pub fn reduce(&mut self, input: Var, kind: ReduceKind, axes: &[usize]) -> Result<Var> {
        let x = self.value(input);
        validate_axes(x.shape(), axes)?;
        let (out_shape, map) = output_index_map(x.shape(), axes);
        let mut acc = vec![0.0f64; out_shape.iter().product()];
        for (&v, &o) in x.data().iter().zip(&map) {
            acc[o] += v as f64;
        }
        if kind == ReduceKind::Mean {
            let n = count(x.shape(), axes) as f64;
            for a in &mut acc {
                *a /= n;
            }
        }
        let value = Tensor::new(out_shape, acc.into_iter().map(|v| v as f32).collect())?;
        self.push(
            value,
            Op::Reduce {
                input,
                kind,
                axes: axes.to_vec(),
            },
            "reduce",
        )
    }

    pub fn sum(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(input, ReduceKind::Sum, axes)
    }

    pub fn mean(&mut self, input: Var, axes: &[usize]) -> Result<Var> {
        self.reduce(input, ReduceKind::Mean, axes)
    }

    /// Sum over every axis, producing a scalar.
    pub fn sum_all(&mut self, input: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(input).len()).collect();
        self.sum(input, &axes)
    }

    /// Mean over every axis, producing a scalar.
    pub fn mean_all(&mut self, input: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(input).len()).collect();
        self.mean(input, &axes)
    }
}

pub(crate) fn reduce_backward(
    shape: &[usize],
    input: Var,
    kind: ReduceKind,
    axes: &[usize],
    gout: &[f32],
) -> InputGrads {
    let (_, map) = output_index_map(shape, axes);
    let scale = match kind {
        ReduceKind::Sum => 1.0,
        ReduceKind::Mean => 1.0 / count(shape, axes) as f32,
    };
    vec![(input, map.iter().map(|&o| gout[o] * scale).collect())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn reduce_of(t: Tensor, kind: ReduceKind, axes: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(t);
        let y = g.reduce(x, kind, axes)?;
        Ok(g.value(y).clone())
    }

    #[test]
    fn sum_of_ones() {
        let y = reduce_of(Tensor::ones(&[2, 3]), ReduceKind::Sum, &[0, 1]).unwrap();
        assert_eq!(y.shape(), &[] as &[usize]);
        assert_eq!(y.item(), 6.0);
    }

    #[test]
    fn mean_over_leading_axis() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 3.0, 3.0, 5.0]).unwrap();
        let y = reduce_of(x, ReduceKind::Mean, &[0]).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0]);
    }

    #[test]
    fn empty_axes_is_identity() {
        let x = Tensor::new(vec![2, 2], vec![1.0, 3.0, 3.0, 5.0]).unwrap();
        assert_eq!(reduce_of(x.clone(), ReduceKind::Mean, &[]).unwrap(), x);
    }

    #[test]
    fn joint_reduction_equals_sequential() {
        let mut rng = RngStream::new(4);
        let x = Tensor::randn(&[3, 4, 5], 1.0, &mut rng);
        let joint = reduce_of(x.clone(), ReduceKind::Sum, &[0, 1]).unwrap();
        let first = reduce_of(x, ReduceKind::Sum, &[0]).unwrap();
        let seq = reduce_of(first, ReduceKind::Sum, &[0]).unwrap();
        assert!(joint.max_abs_diff(&seq) < 1e-5);
        assert_eq!(joint.shape(), &[5]);
    }

    #[test]
    fn inner_axis_reduction_layout() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(
            reduce_of(x.clone(), ReduceKind::Sum, &[1]).unwrap().data(),
            &[6.0, 15.0]
        );
        assert_eq!(
            reduce_of(x, ReduceKind::Sum, &[0]).unwrap().data(),
            &[5.0, 7.0, 9.0]
        );
    }

    #[test]
    fn duplicate_or_invalid_axes() {
        assert!(reduce_of(Tensor::ones(&[2, 2]), ReduceKind::Sum, &[0, 0]).is_err());
        assert!(reduce_of(Tensor::ones(&[2, 2]), ReduceKind::Sum, &[2]).is_err());
    }
}
