//! Training loop and batched inference.

use ndarr_core::{Graph, RngStream, Tensor};
use serde::{Deserialize, Serialize};

use crate::dataset::{stratified_holdout, Dataset, PreparedSet};
use crate::diffnorm::InputTransform;
use crate::error::{AtrError, Result};
use crate::losses::{cls_loss, depth_loss, gate_loss, total_loss, DepthLossKind, LossParts, LossWeights};
use crate::metrics::{eer, ScoreSet};
use crate::net::{AtrFasModel, ForwardOutputs, Mode, ModelConfig};
use crate::optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mode: Mode,
    pub experts: usize,
    pub stem_channels: usize,
    pub input: InputTransform,
    pub input_standardize: bool,
    pub tied_experts: bool,
    pub lambda_c: f32,
    pub lambda_d: f32,
    pub lambda_g: f32,
    pub depth_loss: DepthLossKind,
    /// Fraction of the training pool held out for checkpoint selection.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            batch_size: 4,
            lr: 1e-4,
            decay: 0.97,
            epochs: 30,
            seed: 1,
            mode: Mode::Dgm,
            experts: 3,
            stem_channels: 16,
            input: InputTransform::DiffNorm,
            input_standardize: false,
            tied_experts: false,
            lambda_c: w.lambda_c,
            lambda_d: w.lambda_d,
            lambda_g: w.lambda_g,
            depth_loss: DepthLossKind::Bce,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(AtrError::Config("batch_size must be at least 1".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(AtrError::Config(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(AtrError::Config(format!("invalid learning rate {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(AtrError::Config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        self.weights().validate()
    }

    /// Loss weights with `λ_g` forced to zero in modes without gate supervision.
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_c: self.lambda_c,
            lambda_d: self.lambda_d,
            lambda_g: if self.mode.gate_supervised() { self.lambda_g } else { 0.0 },
        }
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi(epoch.saturating_sub(1) as i32)
    }

    pub fn model_config(&self, n0: usize, size: usize) -> ModelConfig {
        ModelConfig {
            mode: self.mode,
            experts: self.experts,
            stem_channels: self.stem_channels,
            n0,
            input: self.input,
            standardize: self.input_standardize,
            size,
            tied_experts: self.tied_experts,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss_c: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_total: f64,
    pub acc: f64,
    pub val_eer: Option<f64>,
    pub val_loss: Option<f64>,
}

impl EpochLog {
    /// `epoch lr L_c L_d L_g acc val_eer`, tab-separated; `nan` when there is
    /// no validation set.
    pub fn line(&self) -> String {
        format!(
            "{}\t{:e}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}",
            self.epoch,
            self.lr,
            self.loss_c,
            self.loss_d,
            self.loss_g,
            self.acc,
            self.val_eer.unwrap_or(f64::NAN)
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best epoch by (validation EER, validation loss); the
    /// initial model when no epoch ran or no validation set exists.
    pub model: AtrFasModel,
    pub last: AtrFasModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// EER threshold of `model` on the validation split.
    pub dev_threshold: Option<f64>,
}

/// Per-sample model outputs over a prepared set.
#[derive(Clone, Debug, Default)]
pub struct Predictions {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    /// Argmax of the gate logits, when the mode has a gate.
    pub gate_argmax: Vec<Option<usize>>,
    pub mean_loss: f64,
    pub loss_c: f64,
    pub loss_d: f64,
    pub loss_g: f64,
}

impl Predictions {
    pub fn score_set(&self) -> Result<ScoreSet> {
        ScoreSet::new(self.scores.clone(), self.labels.clone())
    }
}

struct StepLosses {
    total: f64,
    c: f64,
    d: f64,
    g: f64,
}

fn forward_losses(
    model: &AtrFasModel,
    g: &mut Graph,
    p: &[ndarr_core::Var],
    set: &PreparedSet,
    idx: &[usize],
    config: &TrainConfig,
    gate_rng: &mut RngStream,
) -> Result<(ForwardOutputs, ndarr_core::Var, StepLosses)> {
    let batch = set.batch(idx)?;
    let x = g.constant(batch.inputs);
    let out = model.forward(g, p, x, gate_rng)?;
    let lc = cls_loss(g, out.prob, &batch.cls)?;
    let ld = depth_loss(g, out.depth, &batch.depth, config.depth_loss)?;
    let lg = match out.g {
        Some(logits) if config.mode.gate_supervised() => Some(gate_loss(g, logits, &batch.gate)?),
        _ => None,
    };
    let total = total_loss(
        g,
        LossParts {
            cls: lc,
            depth: ld,
            gate: lg,
        },
        &config.weights(),
    )?;
    let val = |v: ndarr_core::Var| g.value(v).item() as f64;
    let losses = StepLosses {
        total: val(total),
        c: val(lc),
        d: val(ld),
        g: lg.map_or(0.0, val),
    };
    Ok((out, total, losses))
}

/// Runs `model` over every sample of `set` without taking gradients.
pub fn predict(model: &AtrFasModel, set: &PreparedSet, config: &TrainConfig, gate_rng: &mut RngStream) -> Result<Predictions> {
    let mut pred = Predictions::default();
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(config.batch_size.max(1)) {
        let mut g = Graph::new();
        let p = model.params().tensors().map(|t| g.constant(t.clone())).collect::<Vec<_>>();
        let (out, _, losses) = forward_losses(model, &mut g, &p, set, chunk, config, gate_rng)?;
        let n = chunk.len() as f64;
        pred.mean_loss += losses.total * n;
        pred.loss_c += losses.c * n;
        pred.loss_d += losses.d * n;
        pred.loss_g += losses.g * n;
        pred.scores.extend(g.value(out.prob).data().iter().map(|&v| v as f64));
        pred.labels.extend(chunk.iter().map(|&i| set.cls[i]));
        match out.g {
            Some(logits) => {
                let t = g.value(logits);
                let m = t.shape()[1];
                pred.gate_argmax.extend(t.data().chunks(m).map(|row| {
                    row.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(j, _)| j)
                }));
            }
            None => pred.gate_argmax.extend(std::iter::repeat_n(None, chunk.len())),
        }
    }
    let n = set.len().max(1) as f64;
    pred.mean_loss /= n;
    pred.loss_c /= n;
    pred.loss_d /= n;
    pred.loss_g /= n;
    Ok(pred)
}

/// Independent random streams derived from the run seed.
pub struct RunStreams {
    root: RngStream,
}

impl RunStreams {
    pub fn new(seed: u64) -> Self {
        RunStreams {
            root: RngStream::new(seed),
        }
    }

    pub fn holdout(&self) -> RngStream {
        self.root.split(1)
    }

    pub fn shuffle(&self, epoch: usize) -> RngStream {
        self.root.split(2).split(epoch as u64)
    }

    pub fn train_gate(&self) -> RngStream {
        self.root.split(3)
    }

    pub fn eval_gate(&self) -> RngStream {
        self.root.split(4)
    }

    pub fn init_seed(&self) -> u64 {
        self.root.split(5).next_u64()
    }
}

/// Fraction of samples whose thresholded score (0.5) matches the label.
fn accuracy(scores: &[f64], labels: &[u8]) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|&(&s, &l)| (s >= 0.5) == (l == 1))
        .count();
    hits as f64 / scores.len().max(1) as f64
}

/// Trains a fresh model on `pool` (indices into `dataset`), holding out a
/// stratified validation fraction for checkpoint selection. `observer` sees
/// every epoch log as soon as it is produced.
pub fn train(
    dataset: &Dataset,
    pool: &[usize],
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if pool.is_empty() {
        return Err(AtrError::Config("training set is empty".into()));
    }
    let samples = dataset.samples();
    let has = |c: u8| pool.iter().any(|&i| samples[i].cls_label() == c);
    if !has(0) || !has(1) {
        return Err(AtrError::Config("training set must contain live and spoof samples".into()));
    }
    let meta = dataset.meta();
    let streams = RunStreams::new(config.seed);
    let (train_idx, val_idx) = stratified_holdout(pool, |i| samples[i].attack(), config.val_fraction, &mut streams.holdout());
    let train_set = PreparedSet::new(&dataset.subset(&train_idx), config.input, config.input_standardize)?;
    let val_set = PreparedSet::new(&dataset.subset(&val_idx), config.input, config.input_standardize)?;
    let val_usable = val_set.cls.contains(&0) && val_set.cls.contains(&1);

    let mut model = AtrFasModel::new(config.model_config(meta.n0, meta.size), streams.init_seed())?;
    let mut adam = Adam::new(model.params());
    let mut gate_rng = streams.train_gate();
    let mut best: Option<((f64, f64), AtrFasModel, usize)> = None;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        streams.shuffle(epoch).shuffle(&mut order);
        let (mut sc, mut sd, mut sg, mut st) = (0.0, 0.0, 0.0, 0.0);
        let (mut scores, mut labels) = (Vec::new(), Vec::new());
        for idx in order.chunks(config.batch_size) {
            let mut g = Graph::new();
            let p = model.bind(&mut g);
            let (out, total, losses) = forward_losses(&model, &mut g, &p, &train_set, idx, config, &mut gate_rng)?;
            g.backward(total)?;
            let grads: Vec<Option<Tensor>> = p.iter().map(|&v| g.grad(v)).collect();
            if grads.iter().flatten().any(|t| !t.is_finite()) {
                return Err(ndarr_core::NdError::NonFinite("gradient").into());
            }
            adam.step(model.params_mut(), &grads, lr);
            let n = idx.len() as f64;
            sc += losses.c * n;
            sd += losses.d * n;
            sg += losses.g * n;
            st += losses.total * n;
            scores.extend(g.value(out.prob).data().iter().map(|&v| v as f64));
            labels.extend(idx.iter().map(|&i| train_set.cls[i]));
        }
        let n = train_set.len() as f64;
        let (val_eer, val_loss) = if val_usable {
            let pred = predict(&model, &val_set, config, &mut streams.eval_gate())?;
            (Some(eer(&pred.score_set()?)?.0), Some(pred.mean_loss))
        } else {
            (None, None)
        };
        let entry = EpochLog {
            epoch,
            lr,
            loss_c: sc / n,
            loss_d: sd / n,
            loss_g: sg / n,
            loss_total: st / n,
            acc: accuracy(&scores, &labels),
            val_eer,
            val_loss,
        };
        observer(&entry);
        if let (Some(e), Some(l)) = (val_eer, val_loss) {
            let key = (e, l);
            if best.as_ref().is_none_or(|(k, _, _)| key < *k) {
                best = Some((key, model.clone(), epoch));
            }
        }
        log.push(entry);
    }

    let (best_model, best_epoch) = match best {
        Some((_, m, e)) => (m, e),
        None => (model.clone(), config.epochs),
    };
    let dev_threshold = if val_usable {
        let pred = predict(&best_model, &val_set, config, &mut streams.eval_gate())?;
        Some(eer(&pred.score_set()?)?.1)
    } else {
        None
    };
    Ok(TrainOutcome {
        model: best_model,
        last: model,
        log,
        best_epoch,
        dev_threshold,
    })
}

/// Scores `indices` of `dataset` with a trained model, preparing inputs the
/// way the model was trained.
pub fn evaluate_indices(
    model: &AtrFasModel,
    dataset: &Dataset,
    indices: &[usize],
    config: &TrainConfig,
) -> Result<Predictions> {
    let mc = model.config();
    let set = PreparedSet::new(&dataset.subset(indices), mc.input, mc.standardize)?;
    predict(model, &set, config, &mut RunStreams::new(config.seed).eval_gate())
}
