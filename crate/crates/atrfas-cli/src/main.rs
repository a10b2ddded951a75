use std::path::PathBuf;
use std::process::ExitCode;

use atrfas_cli::commands::{
    cmd_ablate, cmd_eval, cmd_generate, cmd_sweep_n0, cmd_train, AblateArgs, EvalArgs, EvalSource, GenerateArgs,
    SweepArgs, TrainArgs,
};
use atrfas_cli::config::{parse_n0_list, RunConfig};
use atrfas_cli::{CliError, Result};
use clap::{Parser, Subcommand};

/// Flash-based face anti-spoofing on synthetic captures.
#[derive(Parser)]
#[command(name = "atrfas", version)]
struct Cli {
    /// Sectioned TOML config ([generator], [train], [eval], [paths]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for sample rendering and folds.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on the train split.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overwrite an existing checkpoint.
        #[arg(long)]
        force: bool,
    },
    /// Score the test split with a checkpoint, or score a file directly.
    Eval {
        #[arg(long, required_unless_present = "scores_file")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `score<TAB>label` lines, bypassing the model.
        #[arg(long, conflicts_with = "ckpt")]
        scores_file: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold ablation over architecture modes and input transforms.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated settings, e.g. `woMEMM,DGM,DGM-raw`.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and time one model per frame count.
    SweepN0 {
        /// `3..8` (inclusive) or `3,5,7`.
        #[arg(long)]
        n0: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| CliError::Config(format!("--{name} is required (or set it under [paths])")))
}

fn run(cli: Cli) -> Result<String> {
    let config = RunConfig::load(cli.config.as_deref())?;
    let paths = config.paths.clone();
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::Generate { out, seed } => {
            let out = required(out, &paths.data, "out")?;
            cmd_generate(config, &GenerateArgs { out, seed, jobs })
        }
        Command::Train {
            data,
            out,
            mode,
            epochs,
            seed,
            force,
        } => {
            let args = TrainArgs {
                data: required(data, &paths.data, "data")?,
                out: required(out, &paths.out, "out")?,
                mode,
                epochs,
                seed,
                force,
            };
            cmd_train(config, &args)
        }
        Command::Eval {
            ckpt,
            data,
            scores_file,
            threshold,
            out,
        } => {
            let (source, default_out) = match (ckpt, scores_file) {
                (_, Some(path)) => (EvalSource::Scores(path.clone()), path.parent().map(PathBuf::from)),
                (Some(ckpt), None) => {
                    let data = required(data, &paths.data, "data")?;
                    let dir = ckpt.parent().map(PathBuf::from);
                    (EvalSource::Checkpoint { ckpt, data }, dir)
                }
                (None, None) => return Err(CliError::Config("--ckpt or --scores-file is required".into())),
            };
            let out = out
                .or(default_out)
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or_else(|| PathBuf::from("."));
            let args = EvalArgs {
                source,
                out,
                threshold,
                check_config: cli.config.is_some(),
            };
            cmd_eval(config, &args)
        }
        Command::Ablate { data, modes, folds, out } => {
            let args = AblateArgs {
                data: required(data, &paths.data, "data")?,
                modes,
                folds,
                out: out.or(paths.out),
                jobs,
            };
            cmd_ablate(config, &args)
        }
        Command::SweepN0 { n0, out } => {
            let args = SweepArgs {
                n0: n0.as_deref().map(parse_n0_list).transpose()?,
                out: out.or(paths.out),
                jobs,
            };
            cmd_sweep_n0(config, &args)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("atrfas: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
