//! 2-D convolution through im2col and GEMM.
//!
//! The column matrix has one row per `(c_in, ky, kx)` tap and one column per
//! output position. Images are grouped so small feature maps still give the
//! GEMM a wide right-hand side while the block stays in cache. Backward rebuilds
//! the columns instead of keeping them alive on the graph.

use crate::error::{dim_err, NdError, Result};
use crate::graph::{Graph, InputGrads, Op, Var};
use crate::linalg::{gemm, MatRef};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
}

impl Geometry {
    fn taps(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn geometry(
    x: &[usize],
    kernel: &[usize],
    bias: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    if x.len() != 4 || kernel.len() != 4 {
        return dim_err(format!(
            "conv2d expects 4-d input and kernel, got {x:?} and {kernel:?}"
        ));
    }
    let (batch, c_in, h, w) = (x[0], x[1], x[2], x[3]);
    let (c_out, kc, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
    if kc != c_in {
        return dim_err(format!(
            "conv2d input has {c_in} channels, kernel expects {kc}"
        ));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(NdError::Parameter(format!(
            "conv2d kernel must be square and odd, got {kh}x{kw}"
        )));
    }
    if stride == 0 {
        return Err(NdError::Parameter(
            "conv2d stride must be at least 1".into(),
        ));
    }
    if bias != [c_out] {
        return dim_err(format!(
            "conv2d bias shape {bias:?} does not match {c_out} output channels"
        ));
    }
    if h + 2 * padding < kh || w + 2 * padding < kh {
        return dim_err(format!(
            "padded input {h}x{w} (pad {padding}) smaller than kernel {kh}"
        ));
    }
    Ok(Geometry {
        batch,
        c_in,
        h,
        w,
        c_out,
        k: kh,
        stride,
        padding,
        h_out: (h + 2 * padding - kh) / stride + 1,
        w_out: (w + 2 * padding - kh) / stride + 1,
    })
}

/// Images processed per GEMM so the column block stays cache resident.
const COLUMN_BUDGET: usize = 256;

fn chunks(g: &Geometry) -> impl Iterator<Item = (usize, usize)> {
    let per = (COLUMN_BUDGET / g.positions()).max(1);
    let batch = g.batch;
    (0..batch)
        .step_by(per)
        .map(move |b0| (b0, (b0 + per).min(batch)))
}

/// Column matrix for images `b0..b1`: `[taps, (b1-b0)·P]`.
fn im2col(x: &[f32], g: &Geometry, b0: usize, b1: usize) -> Vec<f32> {
    let pos = g.positions();
    let cols = (b1 - b0) * pos;
    let mut out = vec![0.0f32; g.taps() * cols];
    let plane = g.h * g.w;
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst_row = &mut out[row * cols..(row + 1) * cols];
                for b in b0..b1 {
                    let src = &x[(b * g.c_in + c) * plane..(b * g.c_in + c + 1) * plane];
                    for oy in 0..g.h_out {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let base = (b - b0) * pos + oy * g.w_out;
                        for ox in 0..g.w_out {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[base + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Scatter-adds a column block for images `b0..b1` back into `dx`.
fn col2im(cols: &[f32], g: &Geometry, b0: usize, b1: usize, dx: &mut [f32]) {
    let pos = g.positions();
    let ncols = (b1 - b0) * pos;
    let plane = g.h * g.w;
    for c in 0..g.c_in {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for b in b0..b1 {
                    let dst = &mut dx[(b * g.c_in + c) * plane..(b * g.c_in + c + 1) * plane];
                    for oy in 0..g.h_out {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = (b - b0) * pos + oy * g.w_out;
                        for ox in 0..g.w_out {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[iy as usize * g.w + ix as usize] += src_row[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    /// Cross-correlation of `input [B,C_in,H,W]` with `kernel [C_out,C_in,k,k]`
    /// plus a per-channel `bias [C_out]`; zero padding on all sides.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let g = geometry(
            self.shape(input),
            self.shape(kernel),
            self.shape(bias),
            stride,
            padding,
        )?;
        let pos = g.positions();
        let x = self.value(input).data();
        let kd = self.value(kernel).data();
        let bias_v = self.value(bias).data();
        let mut out = vec![0.0f32; g.batch * g.c_out * pos];
        let mut tmp = Vec::new();
        for (b0, b1) in chunks(&g) {
            let cols = im2col(x, &g, b0, b1);
            let ncols = (b1 - b0) * pos;
            tmp.clear();
            tmp.resize(g.c_out * ncols, 0.0);
            gemm(
                g.c_out,
                g.taps(),
                ncols,
                MatRef::rows(kd, g.taps()),
                MatRef::rows(&cols, ncols),
                0.0,
                &mut tmp,
            );
            for o in 0..g.c_out {
                for b in b0..b1 {
                    let src = &tmp[o * ncols + (b - b0) * pos..o * ncols + (b - b0 + 1) * pos];
                    let dst = &mut out[(b * g.c_out + o) * pos..(b * g.c_out + o + 1) * pos];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + bias_v[o];
                    }
                }
            }
        }
        let value = Tensor::new(vec![g.batch, g.c_out, g.h_out, g.w_out], out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            "conv2d",
        )
    }
}

pub(crate) fn conv2d_backward(
    graph: &Graph,
    input: Var,
    kernel: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    gout: &[f32],
) -> InputGrads {
    let g = geometry(
        graph.shape(input),
        graph.shape(kernel),
        graph.shape(bias),
        stride,
        padding,
    )
    .expect("geometry validated in forward");
    let pos = g.positions();
    let (need_x, need_k, need_b) = (graph.needs(input), graph.needs(kernel), graph.needs(bias));
    let x = graph.value(input).data();
    let kd = graph.value(kernel).data();
    let mut dk = vec![0.0f32; if need_k { g.c_out * g.taps() } else { 0 }];
    let mut dx = vec![0.0f32; if need_x { x.len() } else { 0 }];
    let mut db = vec![0.0f64; g.c_out];
    let mut gt = Vec::new();
    for (b0, b1) in chunks(&g) {
        let ncols = (b1 - b0) * pos;
        // [b, C_out, P] -> [C_out, b·P]
        gt.clear();
        gt.resize(g.c_out * ncols, 0.0);
        for b in b0..b1 {
            for o in 0..g.c_out {
                gt[o * ncols + (b - b0) * pos..o * ncols + (b - b0 + 1) * pos]
                    .copy_from_slice(&gout[(b * g.c_out + o) * pos..(b * g.c_out + o + 1) * pos]);
            }
        }
        if need_b {
            for (o, d) in db.iter_mut().enumerate() {
                *d += gt[o * ncols..(o + 1) * ncols]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
        }
        if need_k || need_x {
            let cols = im2col(x, &g, b0, b1);
            if need_k {
                gemm(
                    g.c_out,
                    ncols,
                    g.taps(),
                    MatRef::rows(&gt, ncols),
                    MatRef::transposed(&cols, ncols),
                    1.0,
                    &mut dk,
                );
            }
            if need_x {
                let mut dcols = cols;
                gemm(
                    g.taps(),
                    g.c_out,
                    ncols,
                    MatRef::transposed(kd, g.taps()),
                    MatRef::rows(&gt, ncols),
                    0.0,
                    &mut dcols,
                );
                col2im(&dcols, &g, b0, b1, &mut dx);
            }
        }
    }
    let mut grads = Vec::with_capacity(3);
    if need_b {
        grads.push((bias, db.into_iter().map(|v| v as f32).collect()));
    }
    if need_k {
        grads.push((kernel, dk));
    }
    if need_x {
        grads.push((input, dx));
    }
    grads
}
