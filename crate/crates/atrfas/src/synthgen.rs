//! Synthetic flash sequences rendered from a Lambertian surface model.
//!
//! Each sample is an analytic depth field `z(x, y)` on a `[-1, 1]²` grid lit by
//! a frontal screen flash at `N₀` ascending intensities. Live faces are smooth
//! ellipsoidal caps with a nose ridge, prints are tilted planes, replays add a
//! fine periodic grating (screen texture), and masks are flattened faces with a
//! raised rim.
//!
//! Intensities are quantized to a fixed step of 2⁻²⁰ per term, the way a
//! fixed-point sensor would report them. Every frame value below 16 is then
//! exactly representable in `f32`, so the ambient term cancels bit-exactly
//! under differencing.

use std::path::Path;

use ndarr_core::rng::mix_seed;
use ndarr_core::{RngStream, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_dataset, Dataset, DatasetMeta, Split};
use crate::diffnorm::{AttackType, FlashSequence, Label};
use crate::error::{AtrError, Result};
use crate::losses::make_gate_target;

/// Intensity quantization step.
pub const QUANTUM: f64 = 1.0 / (1u64 << 20) as f64;

fn quantize(v: f64) -> f64 {
    (v / QUANTUM).round() * QUANTUM
}

/// Depth field sampled at pixel centers, row-major `h × w`.
#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    pub h: usize,
    pub w: usize,
    pub z: Vec<f64>,
}

impl Surface {
    fn from_fn(h: usize, w: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut z = Vec::with_capacity(h * w);
        for i in 0..h {
            let y = grid_coord(i, h);
            for j in 0..w {
                z.push(f(grid_coord(j, w), y));
            }
        }
        Surface { h, w, z }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.z[i * self.w + j]
    }

    fn normalize(mut self) -> Result<Self> {
        let (lo, hi) = min_max(&self.z);
        if !(hi - lo > 1e-12) {
            return Err(AtrError::Parameter("surface has no depth range".into()));
        }
        for v in &mut self.z {
            *v = (*v - lo) / (hi - lo);
        }
        Ok(self)
    }

    /// Partial derivatives of `relief · z` with respect to the grid coordinates,
    /// by central differences (one-sided at the border).
    fn gradient(&self, relief: f64, i: usize, j: usize) -> (f64, f64) {
        let step_x = 2.0 / self.w as f64;
        let step_y = 2.0 / self.h as f64;
        let (j0, j1) = (j.saturating_sub(1), (j + 1).min(self.w - 1));
        let (i0, i1) = (i.saturating_sub(1), (i + 1).min(self.h - 1));
        let zx = (self.at(i, j1) - self.at(i, j0)) / ((j1 - j0) as f64 * step_x);
        let zy = (self.at(i1, j) - self.at(i0, j)) / ((i1 - i0) as f64 * step_y);
        (relief * zx, relief * zy)
    }

    /// `cos θ` between the surface normal and `light` (unit vector), clamped at 0.
    pub fn cos_theta(&self, relief: f64, light: [f64; 3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.z.len());
        for i in 0..self.h {
            for j in 0..self.w {
                let (zx, zy) = self.gradient(relief, i, j);
                let dot = -zx * light[0] - zy * light[1] + light[2];
                out.push((dot / (1.0 + zx * zx + zy * zy).sqrt()).max(0.0));
            }
        }
        out
    }

    /// Block means over `factor × factor` tiles.
    pub fn area_average(&self, factor: usize) -> Result<Vec<f64>> {
        if factor == 0 || self.h % factor != 0 || self.w % factor != 0 {
            return Err(AtrError::Parameter(format!(
                "{}x{} surface does not tile by {factor}",
                self.h, self.w
            )));
        }
        let (oh, ow) = (self.h / factor, self.w / factor);
        let mut out = vec![0.0; oh * ow];
        for i in 0..self.h {
            for j in 0..self.w {
                out[(i / factor) * ow + j / factor] += self.at(i, j);
            }
        }
        let area = (factor * factor) as f64;
        out.iter_mut().for_each(|v| *v /= area);
        Ok(out)
    }
}

fn grid_coord(index: usize, extent: usize) -> f64 {
    (2 * index + 1) as f64 / extent as f64 - 1.0
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceParams {
    /// Largest absolute plane slope of prints and replays.
    pub max_tilt: f64,
    pub grating_amplitude: f64,
    /// Inclusive range of whole grating periods across the image width.
    pub grating_cycles: [u32; 2],
    pub mask_depth_factor: f64,
    pub mask_rim: f64,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        Self {
            max_tilt: 0.2,
            grating_amplitude: 0.1,
            grating_cycles: [4, 8],
            mask_depth_factor: 0.6,
            mask_rim: 0.2,
        }
    }
}

struct FaceShape {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    nose: f64,
}

impl FaceShape {
    fn draw(rng: &mut RngStream) -> Self {
        FaceShape {
            cx: rng.uniform_range(-0.05, 0.05),
            cy: rng.uniform_range(-0.05, 0.05),
            ax: rng.uniform_range(0.6, 0.8),
            ay: rng.uniform_range(0.75, 0.95),
            nose: rng.uniform_range(0.2, 0.35),
        }
    }

    fn r2(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx) / self.ax).powi(2) + ((y - self.cy) / self.ay).powi(2)
    }

    fn depth(&self, x: f64, y: f64) -> f64 {
        let r2 = self.r2(x, y);
        let cap = if r2 < 1.0 { (1.0 - r2).powf(1.5) } else { 0.0 };
        let (dx, dy) = (x - self.cx, y - self.cy - 0.05);
        cap + self.nose * (-(dx * dx) / (2.0 * 0.08 * 0.08) - (dy * dy) / (2.0 * 0.18 * 0.18)).exp()
    }
}

/// Analytic depth field for `kind`, normalized to `[0, 1]` units.
///
/// Print and replay consume the same leading draws, so for one seed a replay
/// is exactly its print plus a zero-mean grating.
pub fn make_surface(kind: AttackType, size: (usize, usize), params: &SurfaceParams, seed: u64) -> Result<Surface> {
    let (h, w) = size;
    if h < 8 || w < 8 {
        return Err(AtrError::Parameter(format!("surface grid {h}x{w} is smaller than 8x8")));
    }
    let mut rng = RngStream::new(seed);
    match kind {
        AttackType::None => {
            let face = FaceShape::draw(&mut rng);
            Surface::from_fn(h, w, |x, y| face.depth(x, y)).normalize()
        }
        AttackType::Mask => {
            let face = FaceShape::draw(&mut rng);
            let live = Surface::from_fn(h, w, |x, y| face.depth(x, y)).normalize()?;
            let mut z = live.z;
            for i in 0..h {
                for j in 0..w {
                    let inside = face.r2(grid_coord(j, w), grid_coord(i, h)) < 1.0;
                    let v = &mut z[i * w + j];
                    *v = params.mask_depth_factor * *v + if inside { params.mask_rim } else { 0.0 };
                }
            }
            Ok(Surface { h, w, z })
        }
        AttackType::Print | AttackType::Replay => {
            let tx = rng.uniform_range(-params.max_tilt, params.max_tilt);
            let ty = rng.uniform_range(-params.max_tilt, params.max_tilt);
            let mut surface = Surface::from_fn(h, w, |x, y| 0.5 + tx * x + ty * y);
            if kind == AttackType::Replay {
                let [lo, hi] = params.grating_cycles;
                let cycles = lo + rng.below((hi.max(lo) - lo + 1) as usize) as u32;
                let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
                for i in 0..h {
                    for j in 0..w {
                        let u = (j as f64 + 0.5) / w as f64;
                        surface.z[i * w + j] +=
                            params.grating_amplitude * (std::f64::consts::TAU * cycles as f64 * u + phase).sin();
                    }
                }
            }
            Ok(surface)
        }
    }
}

/// Everything needed to render one capture.
#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub surface: Surface,
    pub k_a: f64,
    pub k_d: f64,
    pub ambient: f64,
    pub flash_levels: Vec<f64>,
    pub attack_type: AttackType,
    pub noise_sigma: f64,
    /// Physical depth of one normalized depth unit, relative to the grid half-width.
    pub relief: f64,
    /// Std of the per-frame light-direction perturbation; 0 keeps the flash frontal.
    pub light_jitter: f64,
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.k_a <= 0.0 || self.k_d <= 0.0 || self.ambient < 0.0 || self.noise_sigma < 0.0 {
            return Err(AtrError::Parameter(
                "reflection coefficients must be positive, ambient and noise non-negative".into(),
            ));
        }
        if self.flash_levels.is_empty() || self.flash_levels.windows(2).any(|p| p[1] < p[0]) {
            return Err(AtrError::Parameter("flash levels must be non-empty and ascending".into()));
        }
        if self.surface.z.iter().any(|v| !v.is_finite()) {
            return Err(AtrError::Parameter("surface has non-finite depth".into()));
        }
        Ok(())
    }

    /// Frontal-light shading, `cos θ` per pixel.
    pub fn shading(&self) -> Vec<f64> {
        self.surface.cos_theta(self.relief, [0.0, 0.0, 1.0])
    }
}

#[derive(Clone, Debug)]
pub struct Rendered {
    pub sequence: FlashSequence,
    /// Pixels that came out negative and were clamped to 0.
    pub clamped: usize,
}

impl Rendered {
    pub fn warning(&self) -> Option<String> {
        let total = self.sequence.frames.numel();
        (self.clamped * 100 > total).then(|| format!("{} of {total} pixels clamped to zero", self.clamped))
    }
}

/// `I_f(i) = k_a·I_a + k_d·I_d[f]·cos θ_i + ε` with `ε ~ N(0, σ²)`.
pub fn render_lambertian(scene: &SceneSpec, seed: u64) -> Result<Rendered> {
    scene.validate()?;
    let (h, w) = (scene.surface.h, scene.surface.w);
    let mut rng = RngStream::new(seed);
    let frontal = scene.shading();
    let ambient = quantize(scene.k_a * scene.ambient);
    let mut data = Vec::with_capacity(scene.flash_levels.len() * h * w);
    let mut clamped = 0;
    for &level in &scene.flash_levels {
        let jittered;
        let cos = if scene.light_jitter > 0.0 {
            let (jx, jy) = (rng.normal() * scene.light_jitter, rng.normal() * scene.light_jitter);
            let n = (jx * jx + jy * jy + 1.0).sqrt();
            jittered = scene.surface.cos_theta(scene.relief, [jx / n, jy / n, 1.0 / n]);
            &jittered
        } else {
            &frontal
        };
        for &c in cos {
            let mut v = ambient + quantize(scene.k_d * level * c);
            if scene.noise_sigma > 0.0 {
                v += quantize(rng.normal() * scene.noise_sigma);
            }
            if v < 0.0 {
                clamped += 1;
                v = 0.0;
            }
            data.push(v as f32);
        }
    }
    let n0 = scene.flash_levels.len();
    let frames = Tensor::new(vec![n0, 1, h, w], data)?;
    let levels = scene.flash_levels.iter().map(|&v| v as f32).collect();
    Ok(Rendered {
        sequence: FlashSequence::new(frames, levels, None, scene.attack_type)?,
        clamped,
    })
}

/// Per-split sample counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCounts {
    pub live: usize,
    pub print: usize,
    pub replay: usize,
    pub mask: usize,
}

impl ClassCounts {
    pub fn get(&self, attack: AttackType) -> usize {
        match attack {
            AttackType::None => self.live,
            AttackType::Print => self.print,
            AttackType::Replay => self.replay,
            AttackType::Mask => self.mask,
        }
    }

    pub fn total(&self) -> usize {
        self.live + self.print + self.replay + self.mask
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n0: usize,
    /// Input frames are `size × size`; depth labels are a quarter of that.
    pub size: usize,
    pub experts: usize,
    pub train: ClassCounts,
    pub test: ClassCounts,
    pub k_a: [f64; 2],
    pub k_d: [f64; 2],
    pub ambient: [f64; 2],
    /// Ambient range of the test split; differs from `ambient` to mimic a change
    /// of acquisition conditions between training and testing.
    pub test_ambient: [f64; 2],
    /// Flash intensities run linearly from `flash_min` to `flash_max`, times a
    /// per-sequence scale drawn from this range.
    pub flash_scale: [f64; 2],
    pub flash_min: f64,
    pub flash_max: f64,
    pub noise_sigma: f64,
    pub relief: f64,
    pub light_jitter: f64,
    pub surface: SurfaceParams,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            n0: 5,
            size: 64,
            experts: 3,
            train: ClassCounts {
                live: 100,
                print: 40,
                replay: 40,
                mask: 40,
            },
            test: ClassCounts {
                live: 30,
                print: 10,
                replay: 10,
                mask: 10,
            },
            k_a: [0.5, 1.5],
            k_d: [0.5, 1.5],
            ambient: [0.2, 1.5],
            test_ambient: [1.5, 2.5],
            flash_scale: [0.5, 1.0],
            flash_min: 1.0,
            flash_max: 5.0,
            noise_sigma: 0.01,
            relief: 0.5,
            light_jitter: 0.0,
            surface: SurfaceParams::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(AtrError::Config(m));
        if self.n0 < 3 {
            return err(format!("n0 must be at least 3, got {}", self.n0));
        }
        if self.size < 8 || self.size % 4 != 0 {
            return err(format!("size must be a multiple of 4 and at least 8, got {}", self.size));
        }
        if self.experts == 0 {
            return err("experts must be positive".into());
        }
        for (name, r) in [
            ("k_a", self.k_a),
            ("k_d", self.k_d),
            ("ambient", self.ambient),
            ("test_ambient", self.test_ambient),
            ("flash_scale", self.flash_scale),
        ] {
            if !(r[0] <= r[1]) || r[0] < 0.0 {
                return err(format!("{name} range {r:?} is not an ordered non-negative interval"));
            }
        }
        if self.k_a[0] <= 0.0 || self.k_d[0] <= 0.0 || self.flash_scale[0] <= 0.0 {
            return err("k_a, k_d and flash_scale must be strictly positive".into());
        }
        if !(self.flash_min > 0.0 && self.flash_max > self.flash_min) {
            return err("flash levels need 0 < flash_min < flash_max".into());
        }
        if self.train.total() == 0 {
            return err("training split is empty".into());
        }
        Ok(())
    }

    pub fn flash_levels(&self, scale: f64) -> Vec<f64> {
        let step = (self.flash_max - self.flash_min) / (self.n0 - 1) as f64;
        (0..self.n0).map(|f| (self.flash_min + step * f as f64) * scale).collect()
    }

    /// `(split, attack)` for every sample index, train first.
    pub fn layout(&self) -> Vec<(Split, AttackType)> {
        let mut out = Vec::new();
        for (split, counts) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            for attack in AttackType::ALL {
                out.extend(std::iter::repeat_n((split, attack), counts.get(attack)));
            }
        }
        out
    }
}

/// One generated capture with its supervision targets.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: usize,
    pub split: Split,
    pub seed: u64,
    pub sequence: FlashSequence,
    /// `[size/4, size/4]`.
    pub depth_label: Tensor,
    pub gate_label: Vec<f32>,
}

impl LabeledSample {
    pub fn cls_label(&self) -> u8 {
        self.sequence.label.cls()
    }

    pub fn attack(&self) -> AttackType {
        self.sequence.attack_type
    }
}

/// Scene for a sample seed. Surface and photometry draws do not depend on
/// `n0`, so the same seed yields the same scene at every frame count.
pub fn scene_for(config: &GeneratorConfig, split: Split, attack: AttackType, seed: u64) -> Result<SceneSpec> {
    let root = RngStream::new(seed);
    let surface = make_surface(attack, (config.size, config.size), &config.surface, root.split(1).next_u64())?;
    let mut photo = root.split(2);
    let ambient = match split {
        Split::Train => config.ambient,
        Split::Test => config.test_ambient,
    };
    let k_a = photo.uniform_range(config.k_a[0], config.k_a[1]);
    let k_d = photo.uniform_range(config.k_d[0], config.k_d[1]);
    let ambient = photo.uniform_range(ambient[0], ambient[1]);
    let scale = photo.uniform_range(config.flash_scale[0], config.flash_scale[1]);
    Ok(SceneSpec {
        surface,
        k_a,
        k_d,
        ambient,
        flash_levels: config.flash_levels(scale),
        attack_type: attack,
        noise_sigma: config.noise_sigma,
        relief: config.relief,
        light_jitter: config.light_jitter,
    })
}

/// Live: area-averaged surface normalized to `[0, 1]`; spoof: constant 0.5.
pub fn depth_label(surface: &Surface, label: Label) -> Result<Tensor> {
    let factor = 4;
    let shape = vec![surface.h / factor, surface.w / factor];
    let data = match label {
        Label::Spoof => vec![0.5f32; shape[0] * shape[1]],
        Label::Live => {
            let avg = surface.area_average(factor)?;
            let (lo, hi) = min_max(&avg);
            if !(hi - lo > 1e-12) {
                return Err(AtrError::Label("live depth label has no range".into()));
            }
            avg.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
        }
    };
    Ok(Tensor::new(shape, data)?)
}

/// Counters reported after generation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GenerationSummary {
    /// `(split, attack, count)` in layout order.
    pub bins: Vec<(Split, AttackType, usize)>,
    pub clamped_pixels: usize,
    pub warnings: Vec<String>,
}

fn render_sample(config: &GeneratorConfig, index: usize, split: Split, attack: AttackType) -> Result<(LabeledSample, Rendered)> {
    let seed = mix_seed(config.seed, index as u64);
    let scene = scene_for(config, split, attack, seed)?;
    let rendered = render_lambertian(&scene, RngStream::new(seed).split(3).next_u64())?;
    let sample = LabeledSample {
        id: index,
        split,
        seed,
        sequence: rendered.sequence.clone(),
        depth_label: depth_label(&scene.surface, attack.label())?,
        gate_label: make_gate_target(attack.label(), attack, config.experts)?,
    };
    Ok((sample, rendered))
}

/// Renders every sample in memory. `jobs > 1` fans out over threads; results are
/// identical to the serial order because each sample owns its seed.
pub fn generate_samples(config: &GeneratorConfig, jobs: usize) -> Result<(Dataset, GenerationSummary)> {
    config.validate()?;
    let layout = config.layout();
    let jobs = jobs.clamp(1, layout.len().max(1));
    let mut results: Vec<Option<Result<(LabeledSample, Rendered)>>> = (0..layout.len()).map(|_| None).collect();
    if jobs == 1 {
        for (i, &(split, attack)) in layout.iter().enumerate() {
            results[i] = Some(render_sample(config, i, split, attack));
        }
    } else {
        let chunk = layout.len().div_ceil(jobs);
        std::thread::scope(|scope| {
            for (c, slots) in results.chunks_mut(chunk).enumerate() {
                let layout = &layout;
                scope.spawn(move || {
                    for (k, slot) in slots.iter_mut().enumerate() {
                        let i = c * chunk + k;
                        let (split, attack) = layout[i];
                        *slot = Some(render_sample(config, i, split, attack));
                    }
                });
            }
        });
    }
    let mut summary = GenerationSummary::default();
    let mut samples = Vec::with_capacity(layout.len());
    for result in results {
        let (sample, rendered) = result.expect("every slot is filled")?;
        summary.clamped_pixels += rendered.clamped;
        if let Some(w) = rendered.warning() {
            summary.warnings.push(format!("sample {}: {w}", sample.id));
        }
        samples.push(sample);
    }
    for (split, counts) in [(Split::Train, &config.train), (Split::Test, &config.test)] {
        for attack in AttackType::ALL {
            summary.bins.push((split, attack, counts.get(attack)));
        }
    }
    let meta = DatasetMeta {
        n0: config.n0,
        size: config.size,
        experts: config.experts,
        seed: config.seed,
    };
    Ok((Dataset::new(meta, samples)?, summary))
}

/// Renders and writes the dataset container to `dir`.
pub fn generate_dataset(config: &GeneratorConfig, dir: &Path, jobs: usize) -> Result<(Dataset, GenerationSummary)> {
    let (dataset, summary) = generate_samples(config, jobs)?;
    write_dataset(&dataset, dir)?;
    Ok((dataset, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnorm::{apply_diffnorm, build_diff_matrix};

    fn flat_scene(levels: Vec<f64>, ambient: f64) -> SceneSpec {
        SceneSpec {
            surface: make_surface(
                AttackType::Print,
                (16, 16),
                &SurfaceParams {
                    max_tilt: 0.0,
                    ..SurfaceParams::default()
                },
                1,
            )
            .unwrap(),
            k_a: 1.0,
            k_d: 1.0,
            ambient,
            flash_levels: levels,
            attack_type: AttackType::Print,
            noise_sigma: 0.01,
            relief: 0.5,
            light_jitter: 0.0,
        }
    }

    #[test]
    fn untilted_print_is_flat_and_fully_lit() {
        let scene = flat_scene(vec![1.0], 0.0);
        assert!(scene.surface.z.iter().all(|&v| v == 0.5));
        assert!(scene.shading().iter().all(|&c| c == 1.0));
    }

    #[test]
    fn live_surface_spans_unit_range() {
        for seed in 0..5 {
            let s = make_surface(AttackType::None, (64, 64), &SurfaceParams::default(), seed).unwrap();
            let (lo, hi) = min_max(&s.z);
            assert_eq!((lo, hi), (0.0, 1.0));
        }
    }

    #[test]
    fn replay_is_print_plus_zero_mean_grating() {
        let p = SurfaceParams::default();
        for seed in 0..5 {
            let print = make_surface(AttackType::Print, (32, 48), &p, seed).unwrap();
            let replay = make_surface(AttackType::Replay, (32, 48), &p, seed).unwrap();
            let residual: Vec<f64> = replay.z.iter().zip(&print.z).map(|(r, q)| r - q).collect();
            let mean = residual.iter().sum::<f64>() / residual.len() as f64;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!(residual.iter().any(|v| v.abs() > 0.01));
        }
    }

    #[test]
    fn tiny_grid_rejected() {
        assert!(make_surface(AttackType::None, (4, 8), &SurfaceParams::default(), 0).is_err());
    }

    #[test]
    fn flat_plane_frame_means_follow_flash_levels() {
        let scene = flat_scene(vec![1.0, 2.0, 3.0, 4.0, 5.0], 0.0);
        let r = render_lambertian(&scene, 3).unwrap();
        for f in 0..5 {
            let m = r.sequence.frames.index_first(f).mean();
            assert!((m - (f + 1) as f64).abs() < 0.01, "frame {f} mean {m}");
        }
    }

    #[test]
    fn equal_flash_levels_give_equal_frames() {
        let mut scene = flat_scene(vec![2.0; 4], 0.7);
        scene.noise_sigma = 0.0;
        let r = render_lambertian(&scene, 0).unwrap();
        let first = r.sequence.frames.index_first(0);
        for f in 1..4 {
            assert_eq!(r.sequence.frames.index_first(f), first);
        }
    }

    #[test]
    fn ambient_change_shifts_every_pixel_by_ka_delta() {
        let surface = make_surface(AttackType::None, (32, 32), &SurfaceParams::default(), 9).unwrap();
        let mut scene = SceneSpec {
            surface,
            k_a: 0.8,
            k_d: 1.2,
            ambient: 0.5,
            flash_levels: vec![1.0, 2.0, 3.0],
            attack_type: AttackType::None,
            noise_sigma: 0.0,
            relief: 0.5,
            light_jitter: 0.0,
        };
        let a = render_lambertian(&scene, 0).unwrap().sequence.frames;
        scene.ambient += 0.25;
        let b = render_lambertian(&scene, 0).unwrap().sequence.frames;
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!(((y - x) as f64 - 0.8 * 0.25).abs() < 2.0 * QUANTUM);
        }
    }

    #[test]
    fn noiseless_diffnorm_matches_closed_form() {
        let config = GeneratorConfig::default();
        let d = build_diff_matrix(5).unwrap();
        for (i, attack) in AttackType::ALL.into_iter().enumerate() {
            let mut scene = scene_for(&config, Split::Train, attack, 40 + i as u64).unwrap();
            scene.noise_sigma = 0.0;
            let frames = render_lambertian(&scene, 0).unwrap().sequence.frames;
            let out = apply_diffnorm(&frames, &d).unwrap();
            let cos = scene.shading();
            for (r, row) in d.rows().enumerate() {
                let dl: f64 = row.iter().zip(&scene.flash_levels).map(|(&c, &l)| c as f64 * l).sum();
                for (p, &c) in cos.iter().enumerate() {
                    let want = scene.k_d * dl * c;
                    assert!((out.data()[r * cos.len() + p] as f64 - want).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn depth_and_gate_label_contract() {
        let config = GeneratorConfig {
            train: ClassCounts {
                live: 2,
                print: 2,
                replay: 2,
                mask: 2,
            },
            test: ClassCounts {
                live: 0,
                print: 0,
                replay: 0,
                mask: 0,
            },
            size: 32,
            ..GeneratorConfig::default()
        };
        let (ds, summary) = generate_samples(&config, 1).unwrap();
        assert_eq!(ds.samples().len(), 8);
        let uniform = ds.samples().iter().filter(|s| s.gate_label.iter().all(|&g| g == 1.0 / 3.0)).count();
        let one_hot = ds
            .samples()
            .iter()
            .filter(|s| s.gate_label.iter().filter(|&&g| g == 1.0).count() == 1)
            .count();
        assert_eq!((uniform, one_hot), (2, 6));
        for s in ds.samples() {
            assert_eq!(s.gate_label.iter().sum::<f32>(), 1.0);
            let (lo, hi) = s
                .depth_label
                .data()
                .iter()
                .fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            if s.cls_label() == 0 {
                assert_eq!((lo, hi), (0.0, 1.0));
            } else {
                assert_eq!((lo, hi), (0.5, 0.5));
            }
        }
        assert_eq!(summary.bins.len(), 8);
        assert!(summary.warnings.is_empty());
    }

    #[test]
    fn parallel_generation_matches_serial() {
        let config = GeneratorConfig {
            size: 16,
            train: ClassCounts {
                live: 3,
                print: 2,
                replay: 2,
                mask: 2,
            },
            ..GeneratorConfig::default()
        };
        let (a, _) = generate_samples(&config, 1).unwrap();
        let (b, _) = generate_samples(&config, 3).unwrap();
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert_eq!(x.sequence.frames, y.sequence.frames);
            assert_eq!(x.seed, y.seed);
        }
    }

    #[test]
    fn scenes_match_across_frame_counts() {
        let c5 = GeneratorConfig::default();
        let c8 = GeneratorConfig { n0: 8, ..c5.clone() };
        let a = scene_for(&c5, Split::Train, AttackType::Mask, 77).unwrap();
        let b = scene_for(&c8, Split::Train, AttackType::Mask, 77).unwrap();
        assert_eq!(a.surface, b.surface);
        assert_eq!((a.k_a, a.k_d, a.ambient), (b.k_a, b.k_d, b.ambient));
        assert_eq!(a.flash_levels.first(), b.flash_levels.first());
        assert_eq!(a.flash_levels.last(), b.flash_levels.last());
    }
}
