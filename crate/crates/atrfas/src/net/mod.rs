//! The anti-spoofing network: stem with position embeddings, expert depth
//! networks, type and attention gates, mixture, frame fusion and head.
//!
//! Batched layout: differential frames enter as `[B, N, H, W]`. Per-frame
//! subnetworks see them as a batch of `B·N` single-channel images, so every
//! frame is processed independently. Depth maps live at `H' = H/4`.

mod checkpoint;
mod layers;

use std::fmt;
use std::str::FromStr;

use ndarr_core::{Graph, NdError, RngStream, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::diffnorm::InputTransform;
use crate::error::{AtrError, Result};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
use layers::{Conv, Dense, Init, ResUNet};
pub use layers::ParamStore;

/// Architecture variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    /// Single expert, frame-mean fusion.
    WoMemm,
    /// Single expert with attention fusion.
    WoMemmAtt,
    /// Unweighted mean over experts.
    Avg,
    /// Unweighted sum over experts.
    Sum,
    /// Expert maps concatenated and merged by a learned 1×1 convolution.
    Cat,
    /// Mean over experts with attention fusion.
    Att,
    /// Random gate logits, no gate supervision.
    Rg,
    RgAtt,
    /// Supervised type gate, frame-mean fusion.
    Tg,
    /// Type gate plus attention gate: the full model.
    Dgm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixer {
    Single,
    Mean,
    Sum,
    Cat,
    Random,
    TypeGate,
}

impl Mode {
    pub const ALL: [Mode; 10] = [
        Mode::WoMemm,
        Mode::Avg,
        Mode::Sum,
        Mode::Cat,
        Mode::WoMemmAtt,
        Mode::Att,
        Mode::Rg,
        Mode::RgAtt,
        Mode::Tg,
        Mode::Dgm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::WoMemm => "woMEMM",
            Mode::WoMemmAtt => "woMEMM_ATT",
            Mode::Avg => "Avg",
            Mode::Sum => "Sum",
            Mode::Cat => "Cat",
            Mode::Att => "ATT",
            Mode::Rg => "RG",
            Mode::RgAtt => "RG_ATT",
            Mode::Tg => "TG",
            Mode::Dgm => "DGM",
        }
    }

    pub fn mixer(self) -> Mixer {
        match self {
            Mode::WoMemm | Mode::WoMemmAtt => Mixer::Single,
            Mode::Avg | Mode::Att => Mixer::Mean,
            Mode::Sum => Mixer::Sum,
            Mode::Cat => Mixer::Cat,
            Mode::Rg | Mode::RgAtt => Mixer::Random,
            Mode::Tg | Mode::Dgm => Mixer::TypeGate,
        }
    }

    pub fn attention(self) -> bool {
        matches!(self, Mode::WoMemmAtt | Mode::Att | Mode::RgAtt | Mode::Dgm)
    }

    /// Whether the gate loss is trained in this mode.
    pub fn gate_supervised(self) -> bool {
        self.mixer() == Mixer::TypeGate
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TryFrom<String> for Mode {
    type Error = AtrError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> String {
        m.name().to_string()
    }
}

impl FromStr for Mode {
    type Err = AtrError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.name().to_ascii_lowercase() == key)
            .ok_or_else(|| AtrError::Parameter(format!("unknown mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub mode: Mode,
    /// Expert count `M` for multi-expert modes.
    pub experts: usize,
    /// Stem output channels `C'`.
    pub stem_channels: usize,
    pub n0: usize,
    pub input: InputTransform,
    pub standardize: bool,
    /// Input frames are `size × size`.
    pub size: usize,
    /// All experts share one parameter set.
    pub tied_experts: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Dgm,
            experts: 3,
            stem_channels: 16,
            n0: 5,
            input: InputTransform::DiffNorm,
            standardize: false,
            size: 64,
            tied_experts: false,
        }
    }
}

impl ModelConfig {
    /// Frames `N` entering the network.
    pub fn frames(&self) -> usize {
        self.input.frame_count(self.n0)
    }

    /// Experts actually mixed (`1` in single-expert modes).
    pub fn expert_count(&self) -> usize {
        if self.mode.mixer() == Mixer::Single {
            1
        } else {
            self.experts
        }
    }

    pub fn depth_size(&self) -> usize {
        self.size / 4
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 4 || self.size % 4 != 0 {
            return Err(AtrError::Tensor(NdError::Dimension(format!(
                "input size {} is not divisible by 4",
                self.size
            ))));
        }
        if self.experts == 0 || self.stem_channels < 2 || self.stem_channels % 2 != 0 {
            return Err(AtrError::Config(format!(
                "need experts >= 1 and an even stem width, got {} and {}",
                self.experts, self.stem_channels
            )));
        }
        if self.n0 < 3 {
            return Err(AtrError::Parameter(format!("n0 must be at least 3, got {}", self.n0)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct TypeGate {
    convs: [Conv; 3],
    fc1: Dense,
    fc2: Dense,
}

#[derive(Clone, Copy, Debug)]
struct AttentionGate {
    convs: [Conv; 2],
    unet: ResUNet,
}

#[derive(Clone, Copy, Debug)]
struct Head {
    convs: [Conv; 3],
    fc: Dense,
}

/// Graph nodes produced by one forward pass over a batch.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutputs {
    /// Gate logits `[B, M]` (type gate or random draw); absent when no gate is used.
    pub g: Option<Var>,
    /// Raw attention maps `[B, N, H', W']`.
    pub attention_raw: Option<Var>,
    /// Normalized attention `[B, N, H', W']`, softmax over frames.
    pub attention: Option<Var>,
    /// Per-frame mixed depth `X'`, `[B, N, H', W']`.
    pub frame_depths: Var,
    /// Fused depth `X̂`, `[B, H', W']`.
    pub depth: Var,
    /// Spoof probability `c`, `[B]`.
    pub prob: Var,
}

fn ceil_half(n: usize) -> usize {
    n.div_ceil(2)
}

#[derive(Clone, Debug)]
pub struct AtrFasModel {
    config: ModelConfig,
    params: ParamStore,
    stem: [Conv; 2],
    pos: usize,
    experts: Vec<ResUNet>,
    cat_merge: Option<Conv>,
    type_gate: Option<TypeGate>,
    attention: Option<AttentionGate>,
    head: Head,
}

impl AtrFasModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = ParamStore::default();
        let c = config.stem_channels;
        let hp = config.depth_size();
        let m = config.expert_count();
        let n = config.frames();
        let stem = [
            Conv::new(&mut p, "stem.0", 1, c / 2, 3, 2, seed),
            Conv::new(&mut p, "stem.1", c / 2, c, 3, 2, seed),
        ];
        let pos = p.add("pos_embed".into(), &[c, hp, hp], Init::Normal(0.02), seed);
        let physical = if config.tied_experts { 1 } else { m };
        let experts = (0..physical)
            .map(|i| ResUNet::new(&mut p, &format!("expert{i}"), [c, 2 * c, 4 * c], seed))
            .collect();
        let cat_merge = (config.mode.mixer() == Mixer::Cat)
            .then(|| Conv::constant_1x1(&mut p, "cat_merge", m, 1.0 / m as f32, seed));
        let type_gate = (config.mode.mixer() == Mixer::TypeGate).then(|| TypeGate {
            convs: [
                Conv::new(&mut p, "type_gate.0", n, 16, 3, 2, seed),
                Conv::new(&mut p, "type_gate.1", 16, 32, 3, 2, seed),
                Conv::new(&mut p, "type_gate.2", 32, 64, 3, 2, seed),
            ],
            fc1: Dense::new(&mut p, "type_gate.fc1", 64, 32, seed),
            fc2: Dense::new(&mut p, "type_gate.fc2", 32, m, seed),
        });
        let attention = config.mode.attention().then(|| AttentionGate {
            convs: [
                Conv::new(&mut p, "attn.0", 1, 8, 3, 2, seed),
                Conv::new(&mut p, "attn.1", 8, 8, 3, 2, seed),
            ],
            unet: ResUNet::new(&mut p, "attn.unet", [8, 16, 32], seed),
        });
        let h3 = ceil_half(ceil_half(ceil_half(hp)));
        let head = Head {
            convs: [
                Conv::new(&mut p, "head.0", 1, 8, 3, 2, seed),
                Conv::new(&mut p, "head.1", 8, 16, 3, 2, seed),
                Conv::new(&mut p, "head.2", 16, 32, 3, 2, seed),
            ],
            fc: Dense::new(&mut p, "head.fc", 32 * h3 * h3, 1, seed),
        };
        Ok(AtrFasModel {
            config,
            params: p,
            stem,
            pos,
            experts,
            cat_merge,
            type_gate,
            attention,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Registers all parameters on `g` as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.bind(g)
    }

    /// Sets every parameter whose name starts with `prefix` to zero.
    pub fn zero_params(&mut self, prefix: &str) {
        for i in 0..self.params.len() {
            if self.params.names().nth(i).is_some_and(|n| n.starts_with(prefix)) {
                self.params.get_mut(i).data_mut().fill(0.0);
            }
        }
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<(usize, usize, usize)> {
        let s = g.shape(x);
        if s.len() != 4 {
            return Err(NdError::Dimension(format!("expected [B,N,H,W] input, got {s:?}")).into());
        }
        let (b, n, h, w) = (s[0], s[1], s[2], s[3]);
        if h % 4 != 0 || w % 4 != 0 {
            return Err(NdError::Dimension(format!("spatial dims {h}x{w} are not divisible by 4")).into());
        }
        if n != self.config.frames() || h != self.config.size || w != self.config.size {
            return Err(NdError::Dimension(format!(
                "model expects {} frames of {}x{}, got {n} of {h}x{w}",
                self.config.frames(),
                self.config.size,
                self.config.size
            ))
            .into());
        }
        Ok((b, n, h))
    }

    fn frames_as_batch(g: &mut Graph, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        Ok(g.reshape(x, &[s[0] * s[1], 1, s[2], s[3]])?)
    }

    /// `X⁰ = Stem(X) + P`: `[B·N, C', H', W']` with the same `P` added to every frame.
    pub fn stem_forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        self.check_input(g, x)?;
        let frames = Self::frames_as_batch(g, x)?;
        let h = self.stem[0].apply_relu(g, p, frames)?;
        let h = self.stem[1].apply_relu(g, p, h)?;
        Ok(g.add_broadcast(h, p[self.pos])?)
    }

    /// Expert `i` (0-based) on stem features: `[B·N, 1, H', W']` in `(0, 1)`.
    pub fn expert_forward(&self, g: &mut Graph, p: &[Var], i: usize, x0: Var) -> Result<Var> {
        if i >= self.config.expert_count() {
            return Err(AtrError::Parameter(format!(
                "expert index {i} out of range for {} experts",
                self.config.expert_count()
            )));
        }
        let unet = &self.experts[if self.config.tied_experts { 0 } else { i }];
        let raw = unet.apply(g, p, x0)?;
        Ok(g.sigmoid(raw)?)
    }

    /// Gate logits `[B, M]` from frames concatenated along channels.
    pub fn type_gate(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let gate = self
            .type_gate
            .as_ref()
            .ok_or_else(|| AtrError::Parameter(format!("mode {} has no type gate", self.config.mode)))?;
        let mut h = x;
        for conv in &gate.convs {
            h = conv.apply_relu(g, p, h)?;
        }
        let pooled = g.mean(h, &[2, 3])?;
        let hidden = gate.fc1.apply(g, p, pooled)?;
        let hidden = g.relu(hidden)?;
        gate.fc2.apply(g, p, hidden)
    }

    /// Raw per-frame attention maps `[B, N, H', W']`.
    pub fn attention_gate(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let attn = self
            .attention
            .as_ref()
            .ok_or_else(|| AtrError::Parameter(format!("mode {} has no attention gate", self.config.mode)))?;
        let (b, n, _) = self.check_input(g, x)?;
        let frames = Self::frames_as_batch(g, x)?;
        let h = attn.convs[0].apply_relu(g, p, frames)?;
        let h = attn.convs[1].apply_relu(g, p, h)?;
        let raw = attn.unet.apply(g, p, h)?;
        let hp = self.config.depth_size();
        Ok(g.reshape(raw, &[b, n, hp, hp])?)
    }

    /// Spoof probability `[B]` from fused depth `[B, H', W']`.
    pub fn classify(&self, g: &mut Graph, p: &[Var], depth: Var) -> Result<Var> {
        let s = g.shape(depth).to_vec();
        let mut h = g.reshape(depth, &[s[0], 1, s[1], s[2]])?;
        for conv in &self.head.convs {
            h = conv.apply_relu(g, p, h)?;
        }
        let flat_len: usize = g.shape(h)[1..].iter().product();
        let flat = g.reshape(h, &[s[0], flat_len])?;
        let logit = self.head.fc.apply(g, p, flat)?;
        let c = g.sigmoid(logit)?;
        Ok(g.reshape(c, &[s[0]])?)
    }

    /// Full pipeline for the configured mode. `gate_rng` feeds the random-gate
    /// modes and is left untouched otherwise.
    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var, gate_rng: &mut RngStream) -> Result<ForwardOutputs> {
        let (b, n, _) = self.check_input(g, x)?;
        let hp = self.config.depth_size();
        let m = self.config.expert_count();
        let k = n * hp * hp;
        let x0 = self.stem_forward(g, p, x)?;
        let shortcut = self.config.tied_experts && matches!(self.config.mode.mixer(), Mixer::Mean | Mixer::Single);
        let outputs: Vec<Var> = if shortcut {
            // The mean of identical maps is the map itself.
            vec![self.expert_forward(g, p, 0, x0)?]
        } else if self.config.tied_experts {
            vec![self.expert_forward(g, p, 0, x0)?; m]
        } else {
            (0..m).map(|i| self.expert_forward(g, p, i, x0)).collect::<Result<_>>()?
        };
        let mut logits = None;
        let mixed = match self.config.mode.mixer() {
            _ if outputs.len() == 1 => g.reshape(outputs[0], &[b, k])?,
            Mixer::Cat => {
                let stacked = g.concat(&outputs, 1)?;
                let merge = self.cat_merge.as_ref().expect("cat mode registers a merge layer");
                let merged = merge.apply(g, p, stacked)?;
                g.reshape(merged, &[b, k])?
            }
            mixer => {
                let per: Vec<Var> = outputs
                    .iter()
                    .map(|&o| g.reshape(o, &[b, 1, k]))
                    .collect::<std::result::Result<_, _>>()?;
                let xbar = g.concat(&per, 1)?;
                match mixer {
                    Mixer::Mean => g.mean(xbar, &[1])?,
                    Mixer::Sum => g.sum(xbar, &[1])?,
                    Mixer::Random => {
                        let l = g.constant(Tensor::randn(&[b, m], 1.0, gate_rng));
                        logits = Some(l);
                        mix_experts(g, xbar, l)?
                    }
                    Mixer::TypeGate => {
                        let l = self.type_gate(g, p, x)?;
                        logits = Some(l);
                        mix_experts(g, xbar, l)?
                    }
                    Mixer::Single | Mixer::Cat => unreachable!("handled above"),
                }
            }
        };
        let frame_depths = g.reshape(mixed, &[b, n, hp, hp])?;
        let (depth, attention_raw, attention) = if self.config.mode.attention() {
            let raw = self.attention_gate(g, p, x)?;
            let (fused, a) = fuse_frames(g, frame_depths, raw)?;
            (fused, Some(raw), Some(a))
        } else {
            (g.mean(frame_depths, &[1])?, None, None)
        };
        let prob = self.classify(g, p, depth)?;
        Ok(ForwardOutputs {
            g: logits,
            attention_raw,
            attention,
            frame_depths,
            depth,
            prob,
        })
    }
}

/// `X' = Σ_m softmax(g)_m · X̄[m]` for `X̄: [B, M, K]`, `g: [B, M]`; returns `[B, K]`.
pub fn mix_experts(g: &mut Graph, xbar: Var, logits: Var) -> Result<Var> {
    let (xs, ls) = (g.shape(xbar), g.shape(logits));
    if xs.len() != 3 || ls.len() != 2 || xs[0] != ls[0] || xs[1] != ls[1] {
        return Err(NdError::Dimension(format!("gate logits {ls:?} do not match experts {xs:?}")).into());
    }
    let w = g.softmax(logits, 1)?;
    Ok(g.weighted_sum(w, xbar)?)
}

/// Per-pixel softmax of `raw` over the frame axis, then the convex combination
/// of `frame_depths`. Both are `[B, N, H', W']`; returns (`X̂ [B, H', W']`, `A`).
pub fn fuse_frames(g: &mut Graph, frame_depths: Var, raw: Var) -> Result<(Var, Var)> {
    if g.shape(frame_depths) != g.shape(raw) || g.shape(raw).len() != 4 {
        return Err(NdError::Dimension(format!(
            "attention {:?} does not match frame depths {:?}",
            g.shape(raw),
            g.shape(frame_depths)
        ))
        .into());
    }
    let a = g.softmax(raw, 1)?;
    let weighted = g.mul(a, frame_depths)?;
    Ok((g.sum(weighted, &[1])?, a))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            size: 32,
            ..ModelConfig::default()
        }
    }

    fn input(cfg: &ModelConfig, b: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed);
        Tensor::uniform(&[b, cfg.frames(), cfg.size, cfg.size], -1.0, 2.0, &mut rng)
    }

    fn run(model: &AtrFasModel, x: &Tensor) -> (Graph, ForwardOutputs) {
        let mut g = Graph::new();
        let p = model.bind(&mut g);
        let xv = g.constant(x.clone());
        let out = model.forward(&mut g, &p, xv, &mut RngStream::new(0)).unwrap();
        (g, out)
    }

    #[test]
    fn stem_shape_and_zero_embedding() {
        let cfg = ModelConfig::default();
        let mut model = AtrFasModel::new(cfg, 1).unwrap();
        let x = input(&cfg, 1, 2);
        let mut g = Graph::new();
        let p = model.bind(&mut g);
        let xv = g.constant(x.clone());
        let x0 = model.stem_forward(&mut g, &p, xv).unwrap();
        assert_eq!(g.shape(x0), &[6, 16, 16, 16]);
        model.zero_params("pos_embed");
        let mut g2 = Graph::new();
        let p2 = model.bind(&mut g2);
        let xv2 = g2.constant(x);
        let with_zero = model.stem_forward(&mut g2, &p2, xv2).unwrap();
        let frames = g2.reshape(xv2, &[6, 1, 64, 64]).unwrap();
        let h = model.stem[0].apply_relu(&mut g2, &p2, frames).unwrap();
        let raw = model.stem[1].apply_relu(&mut g2, &p2, h).unwrap();
        assert_eq!(g2.value(with_zero), g2.value(raw));
    }

    #[test]
    fn indivisible_input_rejected() {
        let model = AtrFasModel::new(small(Mode::Dgm), 1).unwrap();
        let mut g = Graph::new();
        let p = model.bind(&mut g);
        let x = g.constant(Tensor::zeros(&[1, 6, 30, 30]));
        assert!(matches!(
            model.stem_forward(&mut g, &p, x),
            Err(AtrError::Tensor(NdError::Dimension(_)))
        ));
        assert!(ModelConfig { size: 30, ..small(Mode::Dgm) }.validate().is_err());
    }

    #[test]
    fn dgm_outputs_populated_and_in_range() {
        let cfg = small(Mode::Dgm);
        let model = AtrFasModel::new(cfg, 3).unwrap();
        let (g, out) = run(&model, &input(&cfg, 2, 4));
        assert_eq!(g.shape(out.g.unwrap()), &[2, 3]);
        assert_eq!(g.shape(out.attention_raw.unwrap()), &[2, 6, 8, 8]);
        assert_eq!(g.shape(out.frame_depths), &[2, 6, 8, 8]);
        assert_eq!(g.shape(out.depth), &[2, 8, 8]);
        let c = g.value(out.prob);
        assert!(c.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let a = g.value(out.attention.unwrap());
        let plane = 64;
        for b in 0..2 {
            for px in 0..plane {
                let s: f64 = (0..6).map(|n| a.data()[(b * 6 + n) * plane + px] as f64).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zeroed_modules_give_neutral_outputs() {
        let cfg = small(Mode::Dgm);
        let mut model = AtrFasModel::new(cfg, 5).unwrap();
        for prefix in ["expert", "type_gate", "attn", "head"] {
            model.zero_params(prefix);
        }
        let (g, out) = run(&model, &input(&cfg, 1, 6));
        assert!(g.value(out.g.unwrap()).data().iter().all(|&v| v == 0.0));
        assert!(g.value(out.frame_depths).data().iter().all(|&v| v == 0.5));
        assert!(g.value(out.attention.unwrap()).data().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-7));
        assert_eq!(g.value(out.prob).data(), &[0.5]);
    }

    #[test]
    fn identical_experts_agree() {
        let cfg = small(Mode::Avg);
        let mut model = AtrFasModel::new(cfg, 8).unwrap();
        let names: Vec<String> = model.params().names().map(String::from).collect();
        for (i, name) in names.iter().enumerate() {
            if let Some(rest) = name.strip_prefix("expert1") {
                let src = model.params().index_of(&format!("expert0{rest}")).unwrap();
                *model.params_mut().get_mut(i) = model.params().get(src).clone();
            }
        }
        let mut g = Graph::new();
        let p = model.bind(&mut g);
        let xv = g.constant(input(&cfg, 1, 9));
        let x0 = model.stem_forward(&mut g, &p, xv).unwrap();
        let e0 = model.expert_forward(&mut g, &p, 0, x0).unwrap();
        let e1 = model.expert_forward(&mut g, &p, 1, x0).unwrap();
        assert_eq!(g.value(e0), g.value(e1));
        assert!(model.expert_forward(&mut g, &p, 3, x0).is_err());
    }

    #[test]
    fn tied_average_equals_single_expert() {
        let x = input(&small(Mode::Avg), 2, 10);
        let single = AtrFasModel::new(small(Mode::WoMemm), 11).unwrap();
        let tied = AtrFasModel::new(
            ModelConfig {
                tied_experts: true,
                ..small(Mode::Avg)
            },
            11,
        )
        .unwrap();
        let (g1, o1) = run(&single, &x);
        let (g2, o2) = run(&tied, &x);
        assert_eq!(g1.value(o1.frame_depths), g2.value(o2.frame_depths));
        assert_eq!(g1.value(o1.prob), g2.value(o2.prob));
    }

    #[test]
    fn sum_is_m_times_average() {
        let x = input(&small(Mode::Avg), 1, 12);
        let (ga, oa) = run(&AtrFasModel::new(small(Mode::Avg), 13).unwrap(), &x);
        let (gs, os) = run(&AtrFasModel::new(small(Mode::Sum), 13).unwrap(), &x);
        for (a, s) in ga.value(oa.frame_depths).data().iter().zip(gs.value(os.frame_depths).data()) {
            assert!((3.0 * a - s).abs() <= 1e-6 * s.abs().max(1.0));
        }
    }

    #[test]
    fn mixing_special_cases() {
        let mut g = Graph::new();
        let mut rng = RngStream::new(14);
        let single = g.constant(Tensor::uniform(&[1, 1, 5], 0.0, 1.0, &mut rng));
        let logit = g.constant(Tensor::full(&[1, 1], 7.0));
        let out = mix_experts(&mut g, single, logit).unwrap();
        assert_eq!(g.value(out).data(), g.value(single).data());
        let xbar = g.constant(Tensor::uniform(&[1, 3, 5], 0.0, 1.0, &mut rng));
        let sat = g.constant(Tensor::new(vec![1, 3], vec![0.0, 40.0, 0.0]).unwrap());
        let out = mix_experts(&mut g, xbar, sat).unwrap();
        let want = &g.value(xbar).data()[5..10];
        for (a, b) in g.value(out).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-4);
        }
        let bad = g.constant(Tensor::zeros(&[1, 2]));
        assert!(mix_experts(&mut g, xbar, bad).is_err());
    }

    #[test]
    fn fusion_of_uniform_attention_is_frame_mean() {
        let mut g = Graph::new();
        let mut rng = RngStream::new(15);
        let xp = g.constant(Tensor::uniform(&[1, 4, 3, 3], 0.0, 1.0, &mut rng));
        let raw = g.constant(Tensor::full(&[1, 4, 3, 3], 0.3));
        let (fused, _) = fuse_frames(&mut g, xp, raw).unwrap();
        let mean = g.mean(xp, &[1]).unwrap();
        assert!(g.value(fused).max_abs_diff(g.value(mean)) < 1e-6);
        let other = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(fuse_frames(&mut g, xp, other).is_err());
    }

    #[test]
    fn classification_gradient_reaches_experts() {
        let cfg = small(Mode::Dgm);
        let model = AtrFasModel::new(cfg, 16).unwrap();
        let mut g = Graph::new();
        let p = model.bind(&mut g);
        let xv = g.constant(input(&cfg, 2, 17));
        let out = model.forward(&mut g, &p, xv, &mut RngStream::new(0)).unwrap();
        let loss = g.sum_all(out.prob).unwrap();
        g.backward(loss).unwrap();
        let norm: f64 = model
            .params()
            .names()
            .zip(&p)
            .filter(|(n, _)| n.starts_with("expert"))
            .map(|(_, &v)| g.grad(v).map_or(0.0, |t| t.data().iter().map(|&x| (x as f64).powi(2)).sum()))
            .sum();
        assert!(norm > 0.0);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert_eq!("dgm".parse::<Mode>().unwrap(), Mode::Dgm);
        assert!("MoE".parse::<Mode>().is_err());
    }
}
