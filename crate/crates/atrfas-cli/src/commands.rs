//! Subcommand bodies. Each returns the text it would print so the binary
//! stays a thin shell and tests can inspect output directly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use atrfas::dataset::{read_dataset, Split};
use atrfas::experiments::{ablation_table, run_ablation, sweep_n0, sweep_table, Setting};
use atrfas::metrics::{EvalReport, ScoreSet};
use atrfas::net::{load_checkpoint, save_checkpoint, AtrFasModel};
use atrfas::synthgen::generate_dataset;
use atrfas::train::{evaluate_indices, train, TrainConfig};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, CONFIG_ECHO};
use crate::error::{CliError, Result};

pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train.log";
/// Key-value facts about a training run that evaluation reuses.
pub const TRAIN_SUMMARY: &str = "train.summary";
pub const ROC_CSV: &str = "roc.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// SHA-256 over the dataset container: file names and contents in name order,
/// skipping the config echo.
pub fn dataset_checksum(dir: &Path) -> Result<String> {
    let io = |e: std::io::Error| CliError::Data(format!("{}: {e}", dir.display()));
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()
        .map_err(io)?;
    names.retain(|n| n != CONFIG_ECHO);
    names.sort();
    let mut hasher = Sha256::new();
    for name in &names {
        let bytes = fs::read(dir.join(name)).map_err(io)?;
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub struct GenerateArgs {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub jobs: usize,
}

/// Renders the dataset into `out` and reports per-bin counts and a checksum.
pub fn cmd_generate(mut config: RunConfig, args: &GenerateArgs) -> Result<String> {
    if let Some(seed) = args.seed {
        config.generator.seed = seed;
    }
    config.validate()?;
    let (_, summary) = generate_dataset(&config.generator, &args.out, args.jobs)?;
    config.echo_into(&args.out)?;
    let mut out = String::from("split\tattack\tcount\n");
    for (split, attack, count) in &summary.bins {
        writeln!(out, "{split}\t{attack}\t{count}").unwrap();
    }
    for w in &summary.warnings {
        writeln!(out, "# warning: {w}").unwrap();
    }
    writeln!(out, "checksum\t{}", dataset_checksum(&args.out)?).unwrap();
    Ok(out)
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub mode: Option<String>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub force: bool,
}

/// Trains on the train split and writes the selected checkpoint, one log
/// line per epoch, and a summary with the development threshold.
pub fn cmd_train(mut config: RunConfig, args: &TrainArgs) -> Result<String> {
    if let Some(mode) = &args.mode {
        config.train.mode = mode.parse()?;
    }
    if let Some(epochs) = args.epochs {
        config.train.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    config.validate()?;
    let ckpt = args.out.join(CHECKPOINT);
    if ckpt.exists() && !args.force {
        return Err(CliError::Config(format!("{} exists; pass --force to overwrite", ckpt.display())));
    }
    let dataset = read_dataset(&args.data)?;
    let pool = dataset.indices(Split::Train);
    let outcome = train(&dataset, &pool, &config.train, |_| {})?;
    create_dir(&args.out)?;
    save_checkpoint(&outcome.model, &ckpt)?;
    let log: String = outcome.log.iter().map(|l| l.line() + "\n").collect();
    write_file(&args.out.join(TRAIN_LOG), &log)?;
    let mut summary = format!("best_epoch\t{}\n", outcome.best_epoch);
    if let Some(t) = outcome.dev_threshold {
        writeln!(summary, "dev_threshold\t{t}").unwrap();
    }
    write_file(&args.out.join(TRAIN_SUMMARY), &summary)?;
    config.echo_into(&args.out)?;
    Ok(format!("epochs\t{}\n{summary}checkpoint\t{}\n", outcome.log.len(), ckpt.display()))
}

/// Reads `dev_threshold` from a training summary, if one is present.
fn summary_threshold(path: &Path) -> Result<Option<f64>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(None);
    };
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("dev_threshold\t") {
            let t = v
                .trim()
                .parse()
                .map_err(|_| CliError::Data(format!("{}: bad dev_threshold {v:?}", path.display())))?;
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Parses `score<TAB>label` lines; a non-numeric first line is a header.
pub fn read_scores(path: &Path) -> Result<ScoreSet> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || CliError::Data(format!("{}:{}: expected score and 0/1 label", path.display(), i + 1));
        let mut fields = line.split(|c: char| c == '\t' || c == ',' || c == ' ').filter(|f| !f.is_empty());
        let (Some(s), Some(l)) = (fields.next(), fields.next()) else {
            return Err(bad());
        };
        let Ok(score) = s.parse::<f64>() else {
            if i == 0 {
                continue;
            }
            return Err(bad());
        };
        scores.push(score);
        labels.push(l.parse::<u8>().map_err(|_| bad())?);
    }
    Ok(ScoreSet::new(scores, labels)?)
}

pub enum EvalSource {
    Checkpoint { ckpt: PathBuf, data: PathBuf },
    Scores(PathBuf),
}

pub struct EvalArgs {
    pub source: EvalSource,
    /// Directory for `roc.csv` and the config echo.
    pub out: PathBuf,
    /// Overrides the threshold found next to the checkpoint.
    pub threshold: Option<f64>,
    /// Whether a config file was given; only then is it checked against the checkpoint.
    pub check_config: bool,
}

fn check_compatible(model: &AtrFasModel, config: &TrainConfig) -> Result<()> {
    let mc = model.config();
    let mismatches: Vec<String> = [
        ("mode", mc.mode.to_string(), config.mode.to_string()),
        ("input", mc.input.name().to_string(), config.input.name().to_string()),
        ("experts", mc.experts.to_string(), config.experts.to_string()),
        ("stem_channels", mc.stem_channels.to_string(), config.stem_channels.to_string()),
        ("input_standardize", mc.standardize.to_string(), config.input_standardize.to_string()),
    ]
    .into_iter()
    .filter(|(_, a, b)| a != b)
    .map(|(k, a, b)| format!("{k}: checkpoint {a}, config {b}"))
    .collect();
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!("checkpoint does not match config ({})", mismatches.join("; "))))
    }
}

/// Scores the test split (or a score file) and reports EER and HTER.
pub fn cmd_eval(config: RunConfig, args: &EvalArgs) -> Result<String> {
    let (scores, threshold) = match &args.source {
        EvalSource::Scores(path) => (read_scores(path)?, args.threshold),
        EvalSource::Checkpoint { ckpt, data } => {
            let model = load_checkpoint(ckpt)?;
            if args.check_config {
                check_compatible(&model, &config.train)?;
            }
            let dataset = read_dataset(data)?;
            let (mc, meta) = (model.config(), dataset.meta());
            if (mc.n0, mc.size) != (meta.n0, meta.size) {
                return Err(CliError::Config(format!(
                    "checkpoint expects n0={} size={}, dataset has n0={} size={}",
                    mc.n0, mc.size, meta.n0, meta.size
                )));
            }
            let threshold = match args.threshold {
                Some(t) => Some(t),
                None => summary_threshold(&ckpt.with_file_name(TRAIN_SUMMARY))?,
            };
            let pred = evaluate_indices(&model, &dataset, &dataset.indices(Split::Test), &config.train)?;
            (pred.score_set()?, threshold)
        }
    };
    let report = EvalReport::new(&scores, threshold)?;
    create_dir(&args.out)?;
    write_file(&args.out.join(ROC_CSV), &report.roc_csv())?;
    config.echo_into(&args.out)?;
    let mut out = String::from("metric\tvalue\n");
    writeln!(out, "samples\t{}", scores.len()).unwrap();
    writeln!(out, "eer\t{:.6}", report.eer).unwrap();
    writeln!(out, "eer_threshold\t{:.6}", report.eer_threshold).unwrap();
    writeln!(out, "hter_at_eer\t{:.6}", report.hter).unwrap();
    if let (Some(t), Some(h)) = (report.dev_threshold, report.dev_hter) {
        writeln!(out, "dev_threshold\t{t:.6}").unwrap();
        writeln!(out, "hter\t{h:.6}").unwrap();
    }
    Ok(out)
}

pub struct AblateArgs {
    pub data: PathBuf,
    /// Settings to run; `None` falls back to the config, then the full grid.
    pub modes: Option<Vec<String>>,
    pub folds: Option<usize>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

pub fn parse_settings(names: &[String]) -> Result<Vec<Setting>> {
    if names.is_empty() {
        return Ok(Setting::grid());
    }
    Ok(names.iter().map(|n| n.parse()).collect::<atrfas::Result<_>>()?)
}

/// k-fold ablation over the whole dataset, one row per setting.
pub fn cmd_ablate(mut config: RunConfig, args: &AblateArgs) -> Result<String> {
    if let Some(modes) = &args.modes {
        config.eval.modes = modes.clone();
    }
    if let Some(k) = args.folds {
        config.eval.folds = k;
    }
    config.validate()?;
    let settings = parse_settings(&config.eval.modes)?;
    let dataset = read_dataset(&args.data)?;
    let all: Vec<usize> = (0..dataset.samples().len()).collect();
    let rows = run_ablation(&dataset, &all, &settings, config.eval.folds, &config.train, args.jobs, |_| {})?;
    let table = ablation_table(&rows);
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_file(&dir.join("ablation.tsv"), &table)?;
        config.echo_into(dir)?;
    }
    Ok(table)
}

pub struct SweepArgs {
    pub n0: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

/// Matched datasets per frame count: train, evaluate and time each.
pub fn cmd_sweep_n0(mut config: RunConfig, args: &SweepArgs) -> Result<String> {
    if let Some(n0) = &args.n0 {
        config.eval.n0 = n0.clone();
    }
    config.validate()?;
    let rows = sweep_n0(
        &config.generator,
        &config.eval.n0,
        &config.train,
        config.eval.timing_runs,
        args.jobs,
        |_| {},
    )?;
    let table = sweep_table(&rows);
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_file(&dir.join("sweep.tsv"), &table)?;
        config.echo_into(dir)?;
    }
    Ok(table)
}

