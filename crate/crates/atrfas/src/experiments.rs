//! Cross-validation, the ablation grid and the frame-count sweep.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarr_core::rng::mix_seed;
use ndarr_core::{Graph, RngStream};

use crate::dataset::{prepare_input, Dataset, Split};
use crate::diffnorm::{AttackType, InputTransform};
use crate::error::{AtrError, Result};
use crate::metrics::{median, EvalReport, MeanStd};
use crate::net::{AtrFasModel, Mode};
use crate::synthgen::{generate_samples, GeneratorConfig};
use crate::train::{evaluate_indices, train, TrainConfig};

/// Deals `indices` into `k` folds, stratified by attack type: each type is
/// shuffled with its own stream and dealt round-robin, continuing where the
/// previous type stopped so fold sizes stay balanced.
pub fn assign_folds(dataset: &Dataset, indices: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(AtrError::Stratification(format!("k-fold needs k >= 2, got {k}")));
    }
    let samples = dataset.samples();
    let root = RngStream::new(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (t, attack) in AttackType::ALL.into_iter().enumerate() {
        let mut group: Vec<usize> = indices.iter().copied().filter(|&i| samples[i].attack() == attack).collect();
        root.split(t as u64).shuffle(&mut group);
        for i in group {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for (f, fold) in folds.iter_mut().enumerate() {
        fold.sort_unstable();
        let live = fold.iter().any(|&i| samples[i].cls_label() == 0);
        let spoof = fold.iter().any(|&i| samples[i].cls_label() == 1);
        if !(live && spoof) {
            return Err(AtrError::Stratification(format!("fold {f} lacks live or spoof samples")));
        }
    }
    Ok(folds)
}

/// Per-fold reports and their aggregate.
#[derive(Clone, Debug)]
pub struct KFoldReport {
    pub folds: Vec<EvalReport>,
    /// HTER at each fold's development threshold.
    pub hter: MeanStd,
    pub eer: MeanStd,
}

impl KFoldReport {
    fn from_folds(folds: Vec<EvalReport>) -> Self {
        let hters: Vec<f64> = folds.iter().map(|r| r.dev_hter.unwrap_or(r.hter)).collect();
        let eers: Vec<f64> = folds.iter().map(|r| r.eer).collect();
        KFoldReport {
            hter: MeanStd::of(&hters),
            eer: MeanStd::of(&eers),
            folds,
        }
    }
}

fn run_fold(dataset: &Dataset, folds: &[Vec<usize>], f: usize, config: &TrainConfig) -> Result<EvalReport> {
    let pool: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != f)
        .flat_map(|(_, fold)| fold.iter().copied())
        .collect();
    let fold_config = TrainConfig {
        seed: mix_seed(config.seed, f as u64),
        ..config.clone()
    };
    let outcome = train(dataset, &pool, &fold_config, |_| {})?;
    let pred = evaluate_indices(&outcome.model, dataset, &folds[f], &fold_config)?;
    EvalReport::new(&pred.score_set()?, outcome.dev_threshold)
}

/// Trains a fresh model per fold on the other `k - 1` folds and evaluates it
/// on the held-out one. Fold seeds derive from `config.seed` only, so two
/// configurations run with the same seed are paired fold by fold.
pub fn kfold_eval(dataset: &Dataset, indices: &[usize], k: usize, config: &TrainConfig, jobs: usize) -> Result<KFoldReport> {
    let folds = assign_folds(dataset, indices, k, config.seed)?;
    let jobs = jobs.clamp(1, k);
    let mut reports: Vec<Option<Result<EvalReport>>> = (0..k).map(|_| None).collect();
    if jobs == 1 {
        for (f, slot) in reports.iter_mut().enumerate() {
            *slot = Some(run_fold(dataset, &folds, f, config));
        }
    } else {
        let chunk = k.div_ceil(jobs);
        std::thread::scope(|scope| {
            for (c, slots) in reports.chunks_mut(chunk).enumerate() {
                let folds = &folds;
                scope.spawn(move || {
                    for (o, slot) in slots.iter_mut().enumerate() {
                        *slot = Some(run_fold(dataset, folds, c * chunk + o, config));
                    }
                });
            }
        });
    }
    let folds = reports.into_iter().map(|r| r.expect("every fold ran")).collect::<Result<Vec<_>>>()?;
    Ok(KFoldReport::from_folds(folds))
}

/// One row of the ablation grid: an architecture mode and an input transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Setting {
    pub mode: Mode,
    pub input: InputTransform,
}

impl Setting {
    /// The full grid: every mode with differential input, then the full model
    /// with raw and consecutive-difference input.
    pub fn grid() -> Vec<Setting> {
        let mut out: Vec<Setting> = Mode::ALL
            .into_iter()
            .map(|mode| Setting {
                mode,
                input: InputTransform::DiffNorm,
            })
            .collect();
        for input in [InputTransform::Raw, InputTransform::Adjacent] {
            out.push(Setting { mode: Mode::Dgm, input });
        }
        out
    }

    pub fn name(&self) -> String {
        match self.input {
            InputTransform::DiffNorm => self.mode.name().to_string(),
            other => format!("{}-{}", self.mode.name(), other.name()),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Accepts the names produced by [`Setting::name`]: a mode (`DGM`), or a mode
/// with an input suffix (`DGM-raw`).
impl FromStr for Setting {
    type Err = AtrError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((mode, input)) = s.rsplit_once('-') {
            if let Ok(input) = input.parse::<InputTransform>() {
                return Ok(Setting { mode: mode.parse()?, input });
            }
        }
        Ok(Setting {
            mode: s.parse()?,
            input: InputTransform::DiffNorm,
        })
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub setting: Setting,
    pub report: KFoldReport,
}

/// Runs [`kfold_eval`] for each setting with the same seed, so every row
/// sees the same folds and fold seeds.
pub fn run_ablation(
    dataset: &Dataset,
    indices: &[usize],
    settings: &[Setting],
    k: usize,
    config: &TrainConfig,
    jobs: usize,
    mut observer: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(settings.len());
    for &setting in settings {
        let c = TrainConfig {
            mode: setting.mode,
            input: setting.input,
            ..config.clone()
        };
        let row = AblationRow {
            setting,
            report: kfold_eval(dataset, indices, k, &c, jobs)?,
        };
        observer(&row);
        rows.push(row);
    }
    Ok(rows)
}

fn pct(m: MeanStd) -> String {
    format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std)
}

/// Tab-separated `setting  HTER%  EER%` table with a header.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("setting\tHTER%\tEER%\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\n", r.setting, pct(r.report.hter), pct(r.report.eer)));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub n0: usize,
    /// Differential frames entering the network.
    pub frames: usize,
    pub hter: f64,
    pub eer: f64,
    /// Median batch-1 forward time.
    pub inference_ms: f64,
}

/// Median wall-clock time of `runs` single-sample forward passes, excluding
/// input preparation.
pub fn time_forward(model: &AtrFasModel, dataset: &Dataset, index: usize, runs: usize) -> Result<f64> {
    let mc = *model.config();
    let input = prepare_input(&dataset.samples()[index].sequence, mc.input, mc.standardize)?;
    let shape = input.shape().to_vec();
    let input = input.reshape(&[1, shape[0], shape[1], shape[2]])?;
    let mut rng = RngStream::new(0);
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs.max(1) {
        let start = Instant::now();
        let mut g = Graph::new();
        let p: Vec<_> = model.params().tensors().map(|t| g.constant(t.clone())).collect();
        let x = g.constant(input.clone());
        let out = model.forward(&mut g, &p, x, &mut rng)?;
        std::hint::black_box(g.value(out.prob));
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&times))
}

/// Renders one dataset per `n0` from the same generator seed (so scenes match
/// across rows), trains on its train split, evaluates on its test split and
/// times the forward pass.
pub fn sweep_n0(
    generator: &GeneratorConfig,
    n0_values: &[usize],
    config: &TrainConfig,
    timing_runs: usize,
    jobs: usize,
    mut observer: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    if let Some(&bad) = n0_values.iter().find(|&&n| n < 3) {
        return Err(AtrError::Parameter(format!("n0 must be at least 3, got {bad}")));
    }
    let mut rows = Vec::with_capacity(n0_values.len());
    for &n0 in n0_values {
        let (dataset, _) = generate_samples(&GeneratorConfig { n0, ..generator.clone() }, jobs)?;
        let outcome = train(&dataset, &dataset.indices(Split::Train), config, |_| {})?;
        let test = dataset.indices(Split::Test);
        let pred = evaluate_indices(&outcome.model, &dataset, &test, config)?;
        let report = EvalReport::new(&pred.score_set()?, outcome.dev_threshold)?;
        let row = SweepRow {
            n0,
            frames: outcome.model.config().frames(),
            hter: report.dev_hter.unwrap_or(report.hter),
            eer: report.eer,
            inference_ms: time_forward(&outcome.model, &dataset, test[0], timing_runs)?,
        };
        observer(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Tab-separated `n0  N  HTER%  EER%  ms` table with a header.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("n0\tN\tHTER%\tEER%\tms\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.2}\t{:.2}\t{:.3}\n",
            r.n0,
            r.frames,
            100.0 * r.hter,
            100.0 * r.eer,
            r.inference_ms
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::ClassCounts;

    fn data(train: ClassCounts, size: usize) -> Dataset {
        let config = GeneratorConfig {
            size,
            train,
            test: ClassCounts {
                live: 1,
                print: 1,
                replay: 0,
                mask: 0,
            },
            ..GeneratorConfig::default()
        };
        generate_samples(&config, 1).unwrap().0
    }

    fn balanced() -> Dataset {
        data(
            ClassCounts {
                live: 2,
                print: 2,
                replay: 2,
                mask: 2,
            },
            16,
        )
    }

    #[test]
    fn two_folds_get_one_of_each_type() {
        let d = balanced();
        let idx = d.indices(Split::Train);
        let folds = assign_folds(&d, &idx, 2, 9).unwrap();
        for fold in &folds {
            for attack in AttackType::ALL {
                assert_eq!(fold.iter().filter(|&&i| d.samples()[i].attack() == attack).count(), 1);
            }
        }
        assert_eq!(folds, assign_folds(&d, &idx, 2, 9).unwrap());
    }

    #[test]
    fn folds_partition_the_pool() {
        let d = balanced();
        let idx = d.indices(Split::Train);
        let mut all: Vec<usize> = assign_folds(&d, &idx, 2, 3).unwrap().concat();
        all.sort_unstable();
        assert_eq!(all, idx);
    }

    #[test]
    fn missing_class_in_a_fold_is_an_error() {
        let d = balanced();
        let idx = d.indices(Split::Train);
        assert!(matches!(assign_folds(&d, &idx, 3, 1), Err(AtrError::Stratification(_))));
        assert!(matches!(assign_folds(&d, &idx, 1, 1), Err(AtrError::Stratification(_))));
    }

    #[test]
    fn setting_names_round_trip() {
        for s in Setting::grid() {
            assert_eq!(s.name().parse::<Setting>().unwrap(), s);
        }
        assert!("DGM-bogus".parse::<Setting>().is_err());
    }

    #[test]
    fn grid_has_twelve_settings() {
        let g = Setting::grid();
        assert_eq!(g.len(), 12);
        assert_eq!(g.iter().filter(|s| s.mode == Mode::Dgm).count(), 3);
        assert_eq!(g[11].name(), "DGM-adjacent");
    }

    #[test]
    fn kfold_is_reproducible_and_aggregates() {
        let d = data(
            ClassCounts {
                live: 4,
                print: 2,
                replay: 1,
                mask: 1,
            },
            16,
        );
        let idx = d.indices(Split::Train);
        let config = TrainConfig {
            epochs: 1,
            val_fraction: 0.5,
            stem_channels: 4,
            ..TrainConfig::default()
        };
        let a = kfold_eval(&d, &idx, 2, &config, 1).unwrap();
        let b = kfold_eval(&d, &idx, 2, &config, 2).unwrap();
        assert_eq!(a.folds, b.folds);
        let eers: Vec<f64> = a.folds.iter().map(|r| r.eer).collect();
        assert!((a.eer.mean - (eers[0] + eers[1]) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_rejects_short_sequences() {
        let err = sweep_n0(&GeneratorConfig::default(), &[2, 3], &TrainConfig::default(), 1, 1, |_| {});
        assert!(matches!(err, Err(AtrError::Parameter(_))));
    }
}
