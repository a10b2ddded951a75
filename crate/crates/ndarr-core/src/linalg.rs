/// Strided view of a row-major matrix operand.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn rows(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transposed view of a contiguous `rows × cols` matrix.
    pub fn transposed(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn max_offset(&self, r: usize, c: usize) -> usize {
        (r.saturating_sub(1)) * self.row_stride + (c.saturating_sub(1)) * self.col_stride
    }
}

/// `out = a · b + beta · out` where `a` is `m × k`, `b` is `k × n` and `out` is
/// a contiguous `m × n` buffer.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: MatRef, b: MatRef, beta: f32, out: &mut [f32]) {
    assert!(out.len() >= m * n, "gemm output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut out[..m * n] {
            *v *= beta;
        }
        return;
    }
    assert!(a.max_offset(m, k) < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_offset(k, n) < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `out` is exclusively borrowed for the duration of the call.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product_matches_hand_computation() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut out = [0.0; 4];
        gemm(
            2,
            3,
            2,
            MatRef::rows(&a, 3),
            MatRef::rows(&b, 2),
            0.0,
            &mut out,
        );
        assert_eq!(out, [4.0, 5.0, 10.0, 11.0]);
        // aᵀ·a via a transposed view: 3x2 · 2x3
        let mut ata = [0.0; 9];
        gemm(
            3,
            2,
            3,
            MatRef::transposed(&a, 3),
            MatRef::rows(&a, 3),
            0.0,
            &mut ata,
        );
        assert_eq!(ata[0], 17.0);
        assert_eq!(ata[4], 29.0);
    }
}
