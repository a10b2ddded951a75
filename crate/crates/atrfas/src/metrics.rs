//! Error rates for a spoof-score classifier.
//!
//! Decision rule: a sample is accepted as live when its score is below the
//! threshold. FAR is the fraction of spoofs accepted, FRR the fraction of live
//! samples rejected. Raising the threshold accepts more, so FAR rises and FRR
//! falls.

use crate::error::{AtrError, Result};

/// Spoof probabilities with labels (0 live, 1 spoof).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(AtrError::Metric(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) || scores.iter().any(|s| !s.is_finite()) {
            return Err(AtrError::Metric("labels must be 0/1 and scores finite".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let spoof = self.labels.iter().filter(|&&l| l == 1).count();
        let live = self.labels.len() - spoof;
        if live == 0 || spoof == 0 {
            return Err(AtrError::Metric(format!(
                "both classes are required, got {live} live and {spoof} spoof"
            )));
        }
        Ok((live, spoof))
    }
}

/// `(far, frr)` at `threshold` by counting.
pub fn far_frr(s: &ScoreSet, threshold: f64) -> Result<(f64, f64)> {
    let (live, spoof) = s.class_counts()?;
    let (mut accepted_spoof, mut rejected_live) = (0usize, 0usize);
    for (&score, &label) in s.scores.iter().zip(&s.labels) {
        match (label, score < threshold) {
            (1, true) => accepted_spoof += 1,
            (0, false) => rejected_live += 1,
            _ => {}
        }
    }
    Ok((accepted_spoof as f64 / spoof as f64, rejected_live as f64 / live as f64))
}

/// `(far + frr) / 2` at a threshold fixed beforehand (on a development split).
pub fn hter(test: &ScoreSet, threshold_from_dev: f64) -> Result<f64> {
    let (far, frr) = far_frr(test, threshold_from_dev)?;
    Ok(half_total(far, frr))
}

pub fn half_total(far: f64, frr: f64) -> f64 {
    (far + frr) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Rates at every distinct score, every midpoint between consecutive scores,
/// and one point above the maximum, in ascending threshold order.
pub fn roc(s: &ScoreSet) -> Result<Vec<RocPoint>> {
    s.class_counts()?;
    let mut distinct = s.scores.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = Vec::with_capacity(2 * distinct.len() + 1);
    for (i, &t) in distinct.iter().enumerate() {
        thresholds.push(t);
        if let Some(&next) = distinct.get(i + 1) {
            thresholds.push(0.5 * (t + next));
        }
    }
    thresholds.push(distinct.last().copied().unwrap_or(0.0) + 1.0);
    thresholds
        .into_iter()
        .map(|t| far_frr(s, t).map(|(far, frr)| RocPoint { threshold: t, far, frr }))
        .collect()
}

/// Equal error rate and its threshold. The crossing of FAR and FRR is located
/// on the sweep of [`roc`] and linearly interpolated between the bracketing
/// thresholds; an exact tie resolves to the lowest such threshold.
pub fn eer(s: &ScoreSet) -> Result<(f64, f64)> {
    let curve = roc(s)?;
    Ok(crossing(&curve))
}

fn crossing(curve: &[RocPoint]) -> (f64, f64) {
    let i = curve
        .iter()
        .position(|p| p.far - p.frr >= 0.0)
        .expect("the last point has far = 1 and frr = 0");
    let hi = curve[i];
    if hi.far == hi.frr || i == 0 {
        return (hi.far, hi.threshold);
    }
    let lo = curve[i - 1];
    let (d_lo, d_hi) = (lo.far - lo.frr, hi.far - hi.frr);
    let alpha = -d_lo / (d_hi - d_lo);
    let rate = lo.far + alpha * (hi.far - lo.far);
    (rate, lo.threshold + alpha * (hi.threshold - lo.threshold))
}

/// FAR and FRR on the piecewise-linear curve through the sweep points.
pub fn interpolated_rates(curve: &[RocPoint], threshold: f64) -> (f64, f64) {
    let first = curve[0];
    if threshold <= first.threshold {
        return (first.far, first.frr);
    }
    for w in curve.windows(2) {
        let (a, b) = (w[0], w[1]);
        if threshold <= b.threshold {
            let alpha = (threshold - a.threshold) / (b.threshold - a.threshold);
            return (a.far + alpha * (b.far - a.far), a.frr + alpha * (b.frr - a.frr));
        }
    }
    let last = curve[curve.len() - 1];
    (last.far, last.frr)
}

/// Metrics of one evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub eer: f64,
    pub eer_threshold: f64,
    /// FAR on the interpolated curve at `eer_threshold`.
    pub far: f64,
    /// FRR on the interpolated curve at `eer_threshold`.
    pub frr: f64,
    /// `(far + frr) / 2` at `eer_threshold`.
    pub hter: f64,
    /// HTER on this set at a threshold taken from a development split.
    pub dev_hter: Option<f64>,
    pub dev_threshold: Option<f64>,
    pub roc: Vec<RocPoint>,
}

impl EvalReport {
    pub fn new(test: &ScoreSet, dev_threshold: Option<f64>) -> Result<Self> {
        let roc = roc(test)?;
        let (eer, eer_threshold) = crossing(&roc);
        let (far, frr) = interpolated_rates(&roc, eer_threshold);
        let dev_hter = dev_threshold.map(|t| hter(test, t)).transpose()?;
        Ok(EvalReport {
            eer,
            eer_threshold,
            far,
            frr,
            hter: half_total(far, frr),
            dev_hter,
            dev_threshold,
            roc,
        })
    }

    /// `threshold,far,frr` lines with a header.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("threshold,far,frr\n");
        for p in &self.roc {
            out.push_str(&format!("{},{},{}\n", p.threshold, p.far, p.frr));
        }
        out
    }
}

/// Arithmetic mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarr_core::RngStream;

    fn set(live: &[f64], spoof: &[f64]) -> ScoreSet {
        let scores = live.iter().chain(spoof).copied().collect();
        let labels = std::iter::repeat_n(0, live.len()).chain(std::iter::repeat_n(1, spoof.len())).collect();
        ScoreSet::new(scores, labels).unwrap()
    }

    #[test]
    fn boundary_thresholds() {
        let s = set(&[0.1, 0.2], &[0.8, 0.9]);
        assert_eq!(far_frr(&s, 0.0).unwrap(), (0.0, 1.0));
        assert_eq!(far_frr(&s, 1.5).unwrap(), (1.0, 0.0));
        assert_eq!(far_frr(&s, 0.5).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn single_class_is_an_error() {
        let s = ScoreSet::new(vec![0.1, 0.2], vec![0, 0]).unwrap();
        assert!(matches!(far_frr(&s, 0.5), Err(AtrError::Metric(_))));
        assert!(eer(&s).is_err());
        assert!(ScoreSet::new(vec![0.1], vec![]).is_err());
    }

    #[test]
    fn separable_eer_is_zero() {
        let (e, t) = eer(&set(&[0.1, 0.2, 0.3], &[0.7, 0.9])).unwrap();
        assert_eq!(e, 0.0);
        assert!(t > 0.3 && t <= 0.7);
    }

    #[test]
    fn uninformative_scores_give_half() {
        let mut rng = RngStream::new(1);
        let labels: Vec<u8> = (0..50).map(|i| if i < 2 { i as u8 } else { rng.below(2) as u8 }).collect();
        let s = ScoreSet::new(vec![0.5; 50], labels).unwrap();
        assert_eq!(eer(&s).unwrap().0, 0.5);
    }

    #[test]
    fn hter_arithmetic() {
        assert_eq!(half_total(0.04, 0.02), 0.03);
    }

    #[test]
    fn report_hter_equals_eer() {
        let mut rng = RngStream::new(2);
        let scores: Vec<f64> = (0..40).map(|_| rng.uniform()).collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let r = EvalReport::new(&ScoreSet::new(scores, labels).unwrap(), Some(0.5)).unwrap();
        assert!((r.hter - r.eer).abs() < 1e-12);
        assert!(r.dev_hter.is_some());
        assert!(r.roc_csv().starts_with("threshold,far,frr\n"));
    }

    #[test]
    fn mean_std_and_median() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
