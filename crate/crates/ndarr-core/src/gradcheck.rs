//! Central-difference verification of analytic gradients.
//!
//! A non-scalar output is projected to a scalar with a fixed random weighting
//! `r`. The numeric derivative uses the five-point stencil
//! `(8(y(x+ε) − y(x−ε)) − (y(x+2ε) − y(x−2ε))) / 12ε`, evaluated element by
//! element in f64 before projecting. Its O(ε⁴) truncation error allows a step
//! large enough that f32 rounding of the forward pass stays well below 1e-3.
//!
//! [`Estimator::Ridders`] instead extrapolates central differences over a
//! shrinking step and keeps the estimate its own error table rates best, which
//! copes with outputs where no single step beats both truncation and rounding.
//! A table that converges poorly is rerun from a wider and a narrower start.
//!
//! Relu and clamp make the function piecewise, and a stencil straddling a kink
//! measures neither side. Perturbed evaluations therefore replay the pieces
//! chosen at the unperturbed point (see [`Graph::with_frozen_kinks`]), which
//! keeps every stencil on the smooth piece whose gradient backward returns.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// Five-point stencil at step `eps`.
    FivePoint,
    /// Ridders' extrapolation starting from step `eps`.
    Ridders,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f32,
    pub estimator: Estimator,
    pub seed: u64,
    /// Check only this many coordinates per input, those with the largest
    /// analytic gradient magnitude. `None` checks every coordinate.
    pub coords_per_input: Option<usize>,
    /// Denominator floor of the relative error as a fraction of the largest
    /// gradient magnitude (analytic or numeric) of the same input. Entries far
    /// below that scale are dominated by f32 rounding of the forward pass.
    pub scale_floor: f64,
    /// Same floor as a fraction of the largest gradient magnitude over all
    /// inputs; covers inputs whose gradient vanishes identically.
    pub global_floor: f64,
    /// With [`Estimator::Ridders`]: when set, a pilot step of `eps / 100` measures
    /// how fast the outputs move along the coordinate, and the starting step
    /// is chosen so the fastest single output moves by about this much
    /// (clamped to `[eps / 4, 10·eps]`).
    pub start_change: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 5e-2,
            estimator: Estimator::FivePoint,
            seed: 0,
            coords_per_input: None,
            scale_floor: 0.0,
            global_floor: 0.0,
            start_change: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    /// `(analytic, numeric)` at `worst`.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Builds the op under test on `N(0,1)` inputs of the given shapes and returns
/// the largest relative disagreement between backward and central differences.
pub fn grad_check<F>(build: F, shapes: &[Vec<usize>], seed: u64, eps: f32) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = RngStream::new(seed);
    let inputs: Vec<Tensor> = shapes
        .iter()
        .map(|s| Tensor::randn(s, 1.0, &mut rng))
        .collect();
    let opts = GradCheckOptions {
        eps,
        seed,
        ..GradCheckOptions::default()
    };
    Ok(grad_check_with(build, &inputs, &opts)?.max_rel_error)
}

fn forward<F>(build: &F, inputs: &[Tensor], kinks: &[u8]) -> Result<Tensor>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_frozen_kinks(kinks.to_vec());
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok(g.value(out).clone())
}

pub fn grad_check_with<F>(
    build: F,
    inputs: &[Tensor],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let mut rng = RngStream::new(opts.seed).split(0x6772_6164);
    let projection = Tensor::randn(g.shape(out), 1.0, &mut rng);
    let r = g.constant(projection.clone());
    let weighted = g.mul(out, r)?;
    let loss = g.sum_all(weighted)?;
    let base_pattern = g.kink_pattern();
    let base = g.value(out).clone();
    g.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    let mut checked = Vec::with_capacity(inputs.len());
    for (i, var) in vars.iter().enumerate() {
        let analytic = g
            .grad(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut coords: Vec<usize> = (0..analytic.numel()).collect();
        if let Some(k) = opts.coords_per_input {
            let a = analytic.data();
            coords.sort_by(|&x, &y| a[y].abs().total_cmp(&a[x].abs()).then(x.cmp(&y)));
            coords.truncate(k);
        }
        let mut pairs = Vec::with_capacity(coords.len());
        for c in coords {
            let orig = inputs[i].data()[c];
            let mut at = |offset: f32| -> Result<Tensor> {
                probe[i].data_mut()[c] = orig + offset;
                let y = forward(&build, &probe, &base_pattern);
                probe[i].data_mut()[c] = orig;
                y
            };
            let a = analytic.data()[c] as f64;
            let project = |y: &Tensor| -> f64 {
                y.data()
                    .iter()
                    .zip(projection.data())
                    .map(|(&v, &r)| v as f64 * r as f64)
                    .sum()
            };
            let numeric = match opts.estimator {
                Estimator::FivePoint => {
                    let eps = opts.eps;
                    let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
                    let diff: f64 = (0..projection.numel())
                        .map(|k| {
                            let d1 = p1.data()[k] as f64 - m1.data()[k] as f64;
                            let d2 = p2.data()[k] as f64 - m2.data()[k] as f64;
                            (8.0 * d1 - d2) * projection.data()[k] as f64
                        })
                        .sum();
                    diff / (12.0 * eps as f64)
                }
                Estimator::Ridders => {
                    let h0 = match opts.start_change {
                        Some(t) => {
                            let probe_step = opts.eps / 100.0;
                            let pilot = at(probe_step)?;
                            let rate = pilot
                                .data()
                                .iter()
                                .zip(base.data())
                                .map(|(&p, &b)| (p as f64 - b as f64).abs())
                                .fold(0.0, f64::max)
                                / probe_step as f64;
                            ((t / rate.max(1e-30)) as f32).clamp(opts.eps / 4.0, opts.eps * 10.0)
                        }
                        None => opts.eps,
                    };
                    let mut central = |h: f32| {
                        // The step actually taken after rounding to f32.
                        let up = (orig + h) as f64 - orig as f64;
                        let down = orig as f64 - (orig - h) as f64;
                        Ok((project(&at(h)?) - project(&at(-h)?)) / (up + down))
                    };
                    // A poorly converged table gets two more tries, from a
                    // larger and a smaller start; the best-rated estimate wins.
                    let mut best = ridders(h0, &mut central)?;
                    for h in [h0 * 4.0, h0 / 4.0] {
                        if best.1 <= RIDDERS_ACCEPT * best.0.abs() {
                            break;
                        }
                        let next = ridders(h, &mut central)?;
                        if next.1 < best.1 {
                            best = next;
                        }
                    }
                    best.0
                }
            };
            pairs.push((c, a, numeric));
        }
        checked.push(pairs);
    }
    let global = checked
        .iter()
        .flatten()
        .map(|&(_, a, n)| a.abs().max(n.abs()))
        .fold(0.0, f64::max);
    for (i, pairs) in checked.into_iter().enumerate() {
        let scale = pairs
            .iter()
            .map(|&(_, a, n)| a.abs().max(n.abs()))
            .fold(0.0, f64::max);
        let floor = (opts.scale_floor * scale).max(opts.global_floor * global);
        for (c, a, n) in pairs {
            let err = (a - n).abs() / a.abs().max(n.abs()).max(floor).max(1e-8);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, c));
                report.worst_values = Some((a, n));
            }
        }
    }
    Ok(report)
}

/// Relative error estimate below which a Ridders table is not restarted.
const RIDDERS_ACCEPT: f64 = 1e-4;

/// Ridders' method: a Neville table of central differences at steps shrinking
/// by a factor of 1.4. Returns the entry with the smallest estimated error and
/// that estimate, stopping once higher orders start to diverge.
fn ridders(h0: f32, mut central: impl FnMut(f32) -> Result<f64>) -> Result<(f64, f64)> {
    const CON: f32 = 1.4;
    const CON2: f64 = (CON * CON) as f64;
    const NTAB: usize = 10;
    const SAFE: f64 = 2.0;
    let mut table = [[0.0f64; NTAB]; NTAB];
    let mut h = h0;
    table[0][0] = central(h)?;
    let (mut best, mut err) = (table[0][0], f64::INFINITY);
    for i in 1..NTAB {
        h /= CON;
        table[0][i] = central(h)?;
        let mut fac = CON2;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let e = (table[j][i] - table[j - 1][i])
                .abs()
                .max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    Ok((best, err))
}
