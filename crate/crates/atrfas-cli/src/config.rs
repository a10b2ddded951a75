//! Run configuration: one TOML file with `[generator]`, `[train]`, `[eval]`
//! and `[paths]` sections. Every key is optional and falls back to its
//! default; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use atrfas::synthgen::GeneratorConfig;
use atrfas::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// File name of the resolved-config echo written into every output directory.
pub const CONFIG_ECHO: &str = "config.toml";

/// Environment variable consulted for seeds the config file leaves unset.
pub const SEED_ENV: &str = "ATRFAS_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Folds of the cross-validation used by `ablate`.
    pub folds: usize,
    /// Comma-free list of settings for `ablate`; empty means the full grid.
    pub modes: Vec<String>,
    /// Frame counts swept by `sweep-n0`.
    pub n0: Vec<usize>,
    /// Forward passes timed per sweep row (median reported).
    pub timing_runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: 5,
            modes: Vec::new(),
            n0: (3..=8).collect(),
            timing_runs: 20,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

/// Which seeds the file set explicitly; the rest may come from the environment.
#[derive(Clone, Copy, Debug, Default)]
struct ExplicitSeeds {
    generator: bool,
    train: bool,
}

impl RunConfig {
    /// Parses `text`, then fills seeds the text leaves unset from `env_seed`.
    pub fn parse(text: &str, env_seed: Option<&str>) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let has = |section: &str| {
            table
                .get(section)
                .and_then(|s| s.as_table())
                .is_some_and(|s| s.contains_key("seed"))
        };
        let explicit = ExplicitSeeds {
            generator: has("generator"),
            train: has("train"),
        };
        if let Some(raw) = env_seed {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            if !explicit.generator {
                config.generator.seed = seed;
            }
            if !explicit.train {
                config.train.seed = seed;
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` (defaults only when `None`), consulting `ATRFAS_SEED`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, std::env::var(SEED_ENV).ok().as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        if self.eval.folds < 2 {
            return Err(CliError::Config(format!("eval.folds must be at least 2, got {}", self.eval.folds)));
        }
        if let Some(&bad) = self.eval.n0.iter().find(|&&n| n < 3) {
            return Err(CliError::Config(format!("eval.n0 entries must be at least 3, got {bad}")));
        }
        Ok(())
    }

    /// The fully resolved configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("every config field serializes")
    }

    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        let path = dir.join(CONFIG_ECHO);
        fs::write(&path, self.to_toml()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

/// Parses `3..8` (inclusive) or `3,5,7`.
pub fn parse_n0_list(s: &str) -> Result<Vec<usize>> {
    let bad = || CliError::Config(format!("cannot parse n0 list {s:?}; use 3..8 or 3,4,5"));
    let values: Vec<usize> = match s.split_once("..") {
        Some((a, b)) => {
            let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            (a..=b).collect()
        }
        None => s
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?,
    };
    if values.is_empty() {
        return Err(bad());
    }
    Ok(values)
}
