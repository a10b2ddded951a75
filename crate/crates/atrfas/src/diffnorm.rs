//! Frame alignment and differential normalization of flash sequences.
//!
//! Under a Lambertian model a pixel observed at flash level `I_d` reads
//! `k_a·I_a + k_d·I_d·cosθ`. Subtracting two frames of the same capture removes
//! the ambient term and leaves `k_d·ΔI_d·cosθ`. [`DiffMatrix`] chooses which
//! frame pairs to subtract: every intermediate frame against the dimmest frame,
//! and every intermediate frame against the brightest one. Adjacent frames are
//! never paired because their flash levels are too close to give a clean signal.

use std::fmt;
use std::str::FromStr;

use ndarr_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{AtrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Live,
    Spoof,
}

impl Label {
    /// Classification target: 0 for live, 1 for spoof.
    pub fn cls(self) -> u8 {
        match self {
            Label::Live => 0,
            Label::Spoof => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackType {
    None,
    Print,
    Replay,
    Mask,
}

impl AttackType {
    pub const SPOOFS: [AttackType; 3] = [AttackType::Print, AttackType::Replay, AttackType::Mask];
    pub const ALL: [AttackType; 4] = [
        AttackType::None,
        AttackType::Print,
        AttackType::Replay,
        AttackType::Mask,
    ];

    /// Expert / gate class index of a spoof type.
    pub fn expert_index(self) -> Option<usize> {
        match self {
            AttackType::None => None,
            AttackType::Print => Some(0),
            AttackType::Replay => Some(1),
            AttackType::Mask => Some(2),
        }
    }

    pub fn label(self) -> Label {
        if self == AttackType::None {
            Label::Live
        } else {
            Label::Spoof
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackType::None => "none",
            AttackType::Print => "print",
            AttackType::Replay => "replay",
            AttackType::Mask => "mask",
        }
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackType {
    type Err = AtrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "live" => Ok(AttackType::None),
            "print" => Ok(AttackType::Print),
            "replay" => Ok(AttackType::Replay),
            "mask" => Ok(AttackType::Mask),
            other => Err(AtrError::Parameter(format!("unknown attack type {other:?}"))),
        }
    }
}

/// Five facial landmarks `(x, y)` in pixel coordinates.
pub type Landmarks = [[f64; 2]; 5];

/// `N₀` frames of one capture ordered by screen-flash intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct FlashSequence {
    /// `[N₀, C, H, W]`, physical intensity units.
    pub frames: Tensor,
    pub flash_levels: Vec<f32>,
    pub landmarks: Option<Vec<Landmarks>>,
    pub label: Label,
    pub attack_type: AttackType,
}

impl FlashSequence {
    pub fn new(
        frames: Tensor,
        flash_levels: Vec<f32>,
        landmarks: Option<Vec<Landmarks>>,
        attack_type: AttackType,
    ) -> Result<Self> {
        if frames.ndim() != 4 {
            return Err(AtrError::Parameter(format!(
                "frames must be [N0,C,H,W], got {:?}",
                frames.shape()
            )));
        }
        let n0 = frames.shape()[0];
        if flash_levels.len() != n0 {
            return Err(AtrError::Parameter(format!(
                "{} flash levels for {n0} frames",
                flash_levels.len()
            )));
        }
        if flash_levels.windows(2).any(|w| w[1] < w[0]) {
            return Err(AtrError::Parameter("flash levels must be sorted ascending".into()));
        }
        if let Some(lm) = &landmarks {
            if lm.len() != n0 {
                return Err(AtrError::Parameter(format!("{} landmark sets for {n0} frames", lm.len())));
            }
        }
        Ok(Self {
            frames,
            flash_levels,
            landmarks,
            label: attack_type.label(),
            attack_type,
        })
    }

    pub fn n0(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// `dst = scale · R(rotation) · src + (tx, ty)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub const IDENTITY: Similarity = Similarity {
        scale: 1.0,
        rotation: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (a, b) = (self.scale * self.rotation.cos(), self.scale * self.rotation.sin());
        [a * p[0] - b * p[1] + self.tx, b * p[0] + a * p[1] + self.ty]
    }

    pub fn inverse(&self) -> Similarity {
        let scale = 1.0 / self.scale;
        let rotation = -self.rotation;
        let (a, b) = (scale * rotation.cos(), scale * rotation.sin());
        Similarity {
            scale,
            rotation,
            tx: -(a * self.tx - b * self.ty),
            ty: -(b * self.tx + a * self.ty),
        }
    }
}

/// Least-squares similarity taking `src` points onto `dst` points.
pub fn fit_similarity(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Similarity> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(AtrError::Alignment("need at least two corresponding points".into()));
    }
    let n = src.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
        [sx / n, sy / n]
    };
    let (ms, md) = (mean(src), mean(dst));
    let (mut sxx, mut syy, mut sxy, mut num_a, mut num_b) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (x, y) = (p[0] - ms[0], p[1] - ms[1]);
        let (u, v) = (q[0] - md[0], q[1] - md[1]);
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        num_a += x * u + y * v;
        num_b += x * v - y * u;
    }
    let trace = sxx + syy;
    if trace < 1e-12 {
        return Err(AtrError::Alignment("landmarks coincide".into()));
    }
    let det = sxx * syy - sxy * sxy;
    let min_eig = trace / 2.0 - ((trace / 2.0).powi(2) - det).max(0.0).sqrt();
    if min_eig / trace < 1e-6 {
        return Err(AtrError::Alignment("landmarks are collinear".into()));
    }
    let (a, b) = (num_a / trace, num_b / trace);
    let scale = a.hypot(b);
    if scale < 1e-12 {
        return Err(AtrError::Alignment("fitted scale vanishes".into()));
    }
    Ok(Similarity {
        scale,
        rotation: b.atan2(a),
        tx: md[0] - (a * ms[0] - b * ms[1]),
        ty: md[1] - (b * ms[0] + a * ms[1]),
    })
}

/// Bilinear sample of one `H×W` plane; coordinates outside are clamped to the edge.
fn bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Resamples every frame so its landmarks land on `canonical`. Sequences without
/// landmarks pass through unchanged provided they already have `out_size`.
pub fn align_frames(seq: &FlashSequence, canonical: &Landmarks, out_size: (usize, usize)) -> Result<Tensor> {
    let s = seq.frames.shape();
    let (n0, c, h, w) = (s[0], s[1], s[2], s[3]);
    let Some(landmarks) = &seq.landmarks else {
        if (h, w) != out_size {
            return Err(AtrError::Alignment(format!(
                "no landmarks and frames are {h}x{w}, not {}x{}",
                out_size.0, out_size.1
            )));
        }
        return Ok(seq.frames.clone());
    };
    let (oh, ow) = out_size;
    let mut out = Vec::with_capacity(n0 * c * oh * ow);
    for (f, lm) in landmarks.iter().enumerate() {
        let to_canonical = fit_similarity(lm, canonical)?;
        let back = to_canonical.inverse();
        for ch in 0..c {
            let start = (f * c + ch) * h * w;
            let plane = &seq.frames.data()[start..start + h * w];
            for v in 0..oh {
                for u in 0..ow {
                    let p = back.apply([u as f64, v as f64]);
                    out.push(bilinear(plane, h, w, p[0], p[1]));
                }
            }
        }
    }
    Ok(Tensor::new(vec![n0, c, oh, ow], out)?)
}

/// Signed frame-pair selector with `n` rows over `n0` frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiffMatrix {
    pub n0: usize,
    pub n: usize,
    /// Row-major `n × n0` entries in {-1, 0, 1}.
    pub entries: Vec<i8>,
}

impl DiffMatrix {
    pub fn row(&self, r: usize) -> &[i8] {
        &self.entries[r * self.n0..(r + 1) * self.n0]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.entries.chunks_exact(self.n0)
    }

    fn from_pairs(n0: usize, pairs: impl Iterator<Item = (usize, usize)>) -> Self {
        let mut entries = Vec::new();
        for (plus, minus) in pairs {
            let mut row = vec![0i8; n0];
            row[plus] = 1;
            row[minus] = -1;
            entries.extend(row);
        }
        DiffMatrix {
            n0,
            n: entries.len() / n0,
            entries,
        }
    }
}

/// The `2(N₀−2) × N₀` block matrix `[1, −I, 0; 0, I, −1]`.
pub fn build_diff_matrix(n0: usize) -> Result<DiffMatrix> {
    if n0 < 3 {
        return Err(AtrError::Parameter(format!("n0 must be at least 3, got {n0}")));
    }
    let mids = 1..n0 - 1;
    let pairs = mids
        .clone()
        .map(|j| (0, j))
        .chain(mids.map(|j| (j, n0 - 1)));
    Ok(DiffMatrix::from_pairs(n0, pairs))
}

/// Consecutive-frame differences, `N₀−1` rows `e_j − e_{j+1}`.
pub fn adjacent_diff_matrix(n0: usize) -> Result<DiffMatrix> {
    if n0 < 2 {
        return Err(AtrError::Parameter(format!("n0 must be at least 2, got {n0}")));
    }
    Ok(DiffMatrix::from_pairs(n0, (0..n0 - 1).map(|j| (j, j + 1))))
}

/// Contracts the frame axis: output frame `r = Σ_j D[r,j] · aligned[j]`.
pub fn apply_diffnorm(aligned: &Tensor, d: &DiffMatrix) -> Result<Tensor> {
    let s = aligned.shape();
    if s.len() != 4 || s[0] != d.n0 {
        return Err(AtrError::Tensor(ndarr_core::NdError::Dimension(format!(
            "diff matrix expects {} frames, got shape {s:?}",
            d.n0
        ))));
    }
    let frame = s[1] * s[2] * s[3];
    let x = aligned.data();
    let mut out = Vec::with_capacity(d.n * frame);
    for row in d.rows() {
        let terms: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(j, &c)| (j, c as f64))
            .collect();
        for p in 0..frame {
            let v: f64 = terms.iter().map(|&(j, c)| c * x[j * frame + p] as f64).sum();
            out.push(v as f32);
        }
    }
    Ok(Tensor::new(vec![d.n, s[1], s[2], s[3]], out)?)
}

/// How raw aligned frames become network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InputTransform {
    /// Block differential matrix (the full pipeline).
    DiffNorm,
    /// Raw aligned frames, no differencing.
    Raw,
    /// Consecutive-frame differences.
    Adjacent,
}

impl InputTransform {
    pub fn frame_count(self, n0: usize) -> usize {
        match self {
            InputTransform::DiffNorm => 2 * (n0 - 2),
            InputTransform::Raw => n0,
            InputTransform::Adjacent => n0 - 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputTransform::DiffNorm => "diffnorm",
            InputTransform::Raw => "raw",
            InputTransform::Adjacent => "adjacent",
        }
    }

    pub fn apply(self, aligned: &Tensor) -> Result<Tensor> {
        let n0 = aligned.shape()[0];
        match self {
            InputTransform::DiffNorm => apply_diffnorm(aligned, &build_diff_matrix(n0)?),
            InputTransform::Adjacent => apply_diffnorm(aligned, &adjacent_diff_matrix(n0)?),
            InputTransform::Raw => Ok(aligned.clone()),
        }
    }
}

impl TryFrom<String> for InputTransform {
    type Error = AtrError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InputTransform> for String {
    fn from(t: InputTransform) -> String {
        t.name().to_string()
    }
}

impl FromStr for InputTransform {
    type Err = AtrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffnorm" => Ok(InputTransform::DiffNorm),
            "raw" | "none" => Ok(InputTransform::Raw),
            "adjacent" => Ok(InputTransform::Adjacent),
            other => Err(AtrError::Parameter(format!("unknown input transform {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarr_core::RngStream;

    const TEMPLATE: Landmarks = [[20.0, 24.0], [44.0, 24.0], [32.0, 34.0], [23.0, 46.0], [41.0, 46.0]];

    fn rows(d: &DiffMatrix) -> Vec<Vec<i8>> {
        d.rows().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn five_frame_matrix_matches_reference() {
        let d = build_diff_matrix(5).unwrap();
        assert_eq!(d.n, 6);
        assert_eq!(
            rows(&d),
            vec![
                vec![1, -1, 0, 0, 0],
                vec![1, 0, -1, 0, 0],
                vec![1, 0, 0, -1, 0],
                vec![0, 1, 0, 0, -1],
                vec![0, 0, 1, 0, -1],
                vec![0, 0, 0, 1, -1],
            ]
        );
    }

    #[test]
    fn three_frame_matrix_by_hand() {
        assert_eq!(rows(&build_diff_matrix(3).unwrap()), vec![vec![1, -1, 0], vec![0, 1, -1]]);
    }

    #[test]
    fn block_structure_properties() {
        for n0 in 3..=12 {
            let d = build_diff_matrix(n0).unwrap();
            assert_eq!(d.n, 2 * (n0 - 2));
            for row in d.rows() {
                assert_eq!(row.iter().map(|&v| v as i32).sum::<i32>(), 0);
                assert_eq!(row.iter().filter(|&&v| v == 1).count(), 1);
                assert_eq!(row.iter().filter(|&&v| v == -1).count(), 1);
                assert!(row[0] != 0 || row[n0 - 1] != 0, "row pairs two intermediate frames");
            }
        }
        assert!(build_diff_matrix(2).is_err());
    }

    #[test]
    fn adjacent_matrix_rows() {
        assert_eq!(
            rows(&adjacent_diff_matrix(5).unwrap()),
            vec![
                vec![1, -1, 0, 0, 0],
                vec![0, 1, -1, 0, 0],
                vec![0, 0, 1, -1, 0],
                vec![0, 0, 0, 1, -1],
            ]
        );
    }

    #[test]
    fn constant_sequence_maps_to_zero() {
        let mut rng = RngStream::new(1);
        let frame = Tensor::uniform(&[1, 1, 4, 4], 0.0, 3.0, &mut rng);
        let stack = Tensor::stack(&vec![frame.index_first(0); 5]).unwrap();
        let out = apply_diffnorm(&stack, &build_diff_matrix(5).unwrap()).unwrap();
        assert_eq!(out.shape(), &[6, 1, 4, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_mismatch() {
        let x = Tensor::zeros(&[4, 1, 2, 2]);
        assert!(apply_diffnorm(&x, &build_diff_matrix(5).unwrap()).is_err());
    }

    #[test]
    fn power_of_two_scaling_is_exact() {
        let mut rng = RngStream::new(8);
        let x = Tensor::uniform(&[5, 1, 6, 6], 0.0, 8.0, &mut rng);
        let d = build_diff_matrix(5).unwrap();
        let base = apply_diffnorm(&x, &d).unwrap();
        for alpha in [0.5f32, 2.0, -4.0] {
            let scaled = apply_diffnorm(&x.map(|v| v * alpha), &d).unwrap();
            assert_eq!(scaled, base.map(|v| v * alpha));
        }
    }

    #[test]
    fn identity_landmarks_leave_frames_alone() {
        let mut rng = RngStream::new(2);
        let frames = Tensor::uniform(&[2, 1, 64, 64], 0.0, 1.0, &mut rng);
        let seq = FlashSequence::new(frames.clone(), vec![1.0, 2.0], Some(vec![TEMPLATE; 2]), AttackType::None).unwrap();
        let out = align_frames(&seq, &TEMPLATE, (64, 64)).unwrap();
        assert!(out.max_abs_diff(&frames) < 1e-5);
    }

    #[test]
    fn translation_is_recovered() {
        let shifted: Vec<[f64; 2]> = TEMPLATE.iter().map(|p| [p[0] + 5.0, p[1]]).collect();
        let sim = fit_similarity(&shifted, &TEMPLATE).unwrap();
        assert!((sim.tx + 5.0).abs() < 1e-9);
        assert!(sim.ty.abs() < 1e-9);
        assert!(sim.rotation.abs() < 1e-12);
        assert!((sim.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_similarity_round_trip() {
        let mut rng = RngStream::new(17);
        for _ in 0..20 {
            let t = Similarity {
                scale: rng.uniform_range(0.6, 1.6),
                rotation: rng.uniform_range(-0.8, 0.8),
                tx: rng.uniform_range(-10.0, 10.0),
                ty: rng.uniform_range(-10.0, 10.0),
            };
            let moved: Vec<[f64; 2]> = TEMPLATE.iter().map(|&p| t.apply(p)).collect();
            let fit = fit_similarity(&moved, &TEMPLATE).unwrap();
            let inv = t.inverse();
            assert!((fit.scale - inv.scale).abs() < 1e-4);
            assert!((fit.rotation - inv.rotation).abs() < 1e-4);
            assert!((fit.tx - inv.tx).abs() < 1e-4);
            assert!((fit.ty - inv.ty).abs() < 1e-4);
        }
    }

    #[test]
    fn degenerate_landmarks_rejected() {
        let coincident = [[3.0, 3.0]; 5];
        assert!(matches!(fit_similarity(&coincident, &TEMPLATE), Err(AtrError::Alignment(_))));
        let collinear: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(fit_similarity(&collinear, &TEMPLATE), Err(AtrError::Alignment(_))));
    }

    #[test]
    fn pass_through_requires_matching_size() {
        let seq = FlashSequence::new(Tensor::zeros(&[3, 1, 8, 8]), vec![1.0, 2.0, 3.0], None, AttackType::Print).unwrap();
        assert_eq!(align_frames(&seq, &TEMPLATE, (8, 8)).unwrap(), seq.frames);
        assert!(align_frames(&seq, &TEMPLATE, (16, 16)).is_err());
    }

    #[test]
    fn sequence_invariants() {
        assert!(FlashSequence::new(Tensor::zeros(&[3, 1, 2, 2]), vec![1.0, 3.0, 2.0], None, AttackType::None).is_err());
        let s = FlashSequence::new(Tensor::zeros(&[2, 1, 2, 2]), vec![1.0, 2.0], None, AttackType::Mask).unwrap();
        assert_eq!(s.label, Label::Spoof);
        assert!("hologram".parse::<AttackType>().is_err());
    }
}
