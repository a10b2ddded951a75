//! Gate, depth and classification losses and their weighted total.

use ndarr_core::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::diffnorm::{AttackType, Label};
use crate::error::{AtrError, Result};

/// Predictions are clamped into `[PROB_EPS, 1 - PROB_EPS]` before taking logs.
pub const PROB_EPS: f32 = 1e-6;

/// Gate target: one-hot at the attack's expert for spoofs, uniform `1/M` for live.
pub fn make_gate_target(label: Label, attack: AttackType, m: usize) -> Result<Vec<f32>> {
    if m == 0 {
        return Err(AtrError::Label("gate target needs at least one expert".into()));
    }
    match (label, attack.expert_index()) {
        (Label::Live, None) => Ok(vec![1.0 / m as f32; m]),
        (Label::Spoof, Some(i)) if i < m => {
            let mut t = vec![0.0; m];
            t[i] = 1.0;
            Ok(t)
        }
        (Label::Spoof, Some(i)) => Err(AtrError::Label(format!("expert index {i} out of range for M={m}"))),
        (Label::Spoof, None) => Err(AtrError::Label("spoof sample without an attack type".into())),
        (Label::Live, Some(_)) => Err(AtrError::Label(format!("live sample labelled {attack}"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_c: f32,
    pub lambda_d: f32,
    pub lambda_g: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_c: 1.0,
            lambda_d: 1.0,
            lambda_g: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_c, self.lambda_d, self.lambda_g];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(AtrError::Config(format!("loss weights must be finite and non-negative: {all:?}")));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(AtrError::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthLossKind {
    /// Per-pixel binary cross-entropy with soft targets.
    #[default]
    Bce,
    /// Cross-entropy between a spatial softmax of the prediction and the
    /// target normalized to sum to one.
    Softmax2d,
}

/// `−(1/n) Σ_i Σ_j y_ij · log softmax(g_i)_j` over `[n, M]` logits.
pub fn gate_loss(g: &mut Graph, logits: Var, targets: &Tensor) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || targets.shape() != shape.as_slice() {
        return Err(AtrError::Label(format!(
            "gate targets {:?} do not match logits {shape:?}",
            targets.shape()
        )));
    }
    for row in targets.data().chunks(shape[1]) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
            return Err(AtrError::Label(format!("gate target row {row:?} is not a distribution")));
        }
    }
    let logp = g.log_softmax(logits, 1)?;
    let y = g.constant(targets.clone());
    let prod = g.mul(logp, y)?;
    let total = g.sum_all(prod)?;
    Ok(g.scale(total, -1.0 / shape[0] as f32)?)
}

fn check_unit_interval(t: &Tensor, what: &str) -> Result<()> {
    if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(AtrError::Label(format!("{what} values must lie in [0, 1]")));
    }
    Ok(())
}

/// Mean soft-target BCE of probabilities `pred` against constant `target`.
fn bce(g: &mut Graph, pred: Var, target: &Tensor) -> Result<Var> {
    let d = g.clamp(pred, PROB_EPS, 1.0 - PROB_EPS)?;
    let log_d = g.log(d)?;
    let neg = g.neg(d)?;
    let one_minus = g.add_scalar(neg, 1.0)?;
    let log_1md = g.log(one_minus)?;
    let y = g.constant(target.clone());
    let y_c = g.constant(target.map(|v| 1.0 - v));
    let a = g.mul(y, log_d)?;
    let b = g.mul(y_c, log_1md)?;
    let ll = g.add(a, b)?;
    let mean = g.mean_all(ll)?;
    Ok(g.neg(mean)?)
}

/// Depth loss between predicted maps `[n, H, W]` and labels of the same shape.
pub fn depth_loss(g: &mut Graph, pred: Var, target: &Tensor, kind: DepthLossKind) -> Result<Var> {
    let shape = g.shape(pred).to_vec();
    if target.shape() != shape.as_slice() || shape.len() != 3 {
        return Err(AtrError::Label(format!(
            "depth label {:?} does not match prediction {shape:?}",
            target.shape()
        )));
    }
    check_unit_interval(target, "depth label")?;
    match kind {
        DepthLossKind::Bce => bce(g, pred, target),
        DepthLossKind::Softmax2d => {
            let (n, p) = (shape[0], shape[1] * shape[2]);
            let flat = g.reshape(pred, &[n, p])?;
            let logp = g.log_softmax(flat, 1)?;
            let mut dist = target.clone().reshape(&[n, p])?;
            for row in dist.data_mut().chunks_mut(p) {
                let s: f64 = row.iter().map(|&v| v as f64).sum();
                if s <= 0.0 {
                    row.iter_mut().for_each(|v| *v = 1.0 / p as f32);
                } else {
                    row.iter_mut().for_each(|v| *v = (*v as f64 / s) as f32);
                }
            }
            let y = g.constant(dist);
            let prod = g.mul(logp, y)?;
            let total = g.sum_all(prod)?;
            Ok(g.scale(total, -1.0 / n as f32)?)
        }
    }
}

/// Batch-mean binary cross-entropy of spoof probabilities `c` (`[n]`).
pub fn cls_loss(g: &mut Graph, c: Var, labels: &Tensor) -> Result<Var> {
    if g.shape(c) != labels.shape() {
        return Err(AtrError::Label("class labels do not match predictions".into()));
    }
    if labels.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(AtrError::Label("class labels must be 0 or 1".into()));
    }
    bce(g, c, labels)
}

/// The three loss nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub cls: Var,
    pub depth: Var,
    pub gate: Option<Var>,
}

/// `λ_c L_c + λ_d L_d + λ_g L_g`; terms with zero weight are left out of the graph.
pub fn total_loss(g: &mut Graph, parts: LossParts, w: &LossWeights) -> Result<Var> {
    let mut terms = vec![(parts.cls, w.lambda_c), (parts.depth, w.lambda_d)];
    if let Some(gate) = parts.gate {
        terms.push((gate, w.lambda_g));
    }
    let mut total: Option<Var> = None;
    for (v, lambda) in terms.into_iter().filter(|&(_, l)| l != 0.0) {
        let scaled = g.scale(v, lambda)?;
        total = Some(match total {
            None => scaled,
            Some(t) => g.add(t, scaled)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(g.constant(Tensor::scalar(0.0))),
    }
}
