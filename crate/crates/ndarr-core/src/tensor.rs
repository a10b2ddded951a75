use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{NdError, Result};
use crate::rng::RngStream;

pub const MAX_AXES: usize = 5;

/// Dense row-major `f32` array with explicit shape bookkeeping.
///
/// A zero-axis shape (`[]`) denotes a scalar holding one value.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.len() > MAX_AXES {
            return Err(NdError::Dimension(format!(
                "{} axes exceeds the limit of {MAX_AXES}",
                shape.len()
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NdError::Dimension(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        assert!(shape.len() <= MAX_AXES, "too many axes: {shape:?}");
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Samples `N(0, std²)` entries from `rng`.
    pub fn randn(shape: &[usize], std: f32, rng: &mut RngStream) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = (rng.normal() * std as f64) as f32;
        }
        t
    }

    /// Samples entries uniformly from `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f32, hi: f32, rng: &mut RngStream) -> Self {
        let mut t = Self::zeros(shape);
        for v in &mut t.data {
            *v = rng.uniform_range(lo as f64, hi as f64) as f32;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(
            self.data.len(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.len() > MAX_AXES {
            return Err(NdError::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Sub-tensor at `index` along the leading axis.
    pub fn index_first(&self, index: usize) -> Tensor {
        assert!(!self.shape.is_empty() && index < self.shape[0]);
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| NdError::Dimension("stack of zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            if p.shape != first.shape {
                return Err(NdError::Dimension(format!(
                    "stack shape mismatch {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }

    /// Writes the header line `ndims d0 d1 ...` followed by the little-endian payload.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut header = self.shape.len().to_string();
        for d in &self.shape {
            header.push(' ');
            header.push_str(&d.to_string());
        }
        header.push('\n');
        w.write_all(header.as_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Tensor> {
        let mut header = String::new();
        if r.read_line(&mut header)? == 0 {
            return Err(NdError::Format(
                "unexpected end of input before tensor header".into(),
            ));
        }
        let mut fields = header.split_ascii_whitespace().map(|f| {
            f.parse::<usize>()
                .map_err(|_| NdError::Format(format!("bad tensor header {header:?}")))
        });
        let ndims = fields
            .next()
            .ok_or_else(|| NdError::Format("empty tensor header".into()))??;
        let shape = fields.collect::<Result<Vec<_>>>()?;
        if shape.len() != ndims {
            return Err(NdError::Format(format!(
                "header declares {ndims} axes but lists {}",
                shape.len()
            )));
        }
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Tensor::new(shape, data)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

/// Row-major strides for `shape`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![1; 6], vec![0.0]).is_err());
    }

    #[test]
    fn serialization_header_is_plain_text() {
        let t = Tensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let bytes = t.to_bytes();
        assert!(bytes.starts_with(b"2 2 1\n"));
        assert_eq!(&bytes[6..10], &1.5f32.to_le_bytes());
        let back = Tensor::read_from(&mut &bytes[..]).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn scalar_round_trips() {
        let t = Tensor::scalar(3.25);
        let bytes = t.to_bytes();
        assert!(bytes.starts_with(b"0\n"));
        assert_eq!(Tensor::read_from(&mut &bytes[..]).unwrap(), t);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let bytes = Tensor::ones(&[4]).to_bytes();
        assert!(Tensor::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides(&[]), Vec::<usize>::new());
    }
}
