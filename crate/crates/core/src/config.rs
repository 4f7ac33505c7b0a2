//! Run configuration: one TOML file shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Protocol;
use crate::models::{ModelConfig, ModelKind};
use crate::preprocess::PreprocessConfig;
use crate::synthgait::SynthConfig;
use crate::types::FeatureSet;

pub const OUT_ENV: &str = "INSOLE_VGRF_OUT";
pub const DEFAULT_OUT: &str = "insole-vgrf-out";
pub const DEFAULT_SEED: u64 = 2024;

/// Optional overrides of where each stage reads and writes. Relative
/// paths resolve against the output root.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub trials: Option<PathBuf>,
    pub windows: Option<PathBuf>,
    pub models: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// sensor coordinates CSV (`x,y` per sensor); the built-in 96-sensor
    /// layout when absent
    pub layout: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// restrict training and evaluation to these subjects; empty keeps all
    pub subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub models: Vec<ModelKind>,
    pub feature_sets: Vec<FeatureSet>,
    pub protocols: Vec<Protocol>,
    /// evaluate the reference against itself instead of trained models
    pub oracle: bool,
    /// per-fold cap on training windows; 0 keeps all
    pub max_train_windows: usize,
    /// write per-cycle trace and peak tables
    pub traces: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig {
            models: ModelKind::ALL.to_vec(),
            feature_sets: vec![FeatureSet::T1, FeatureSet::T2, FeatureSet::T3],
            protocols: vec![Protocol::Intra, Protocol::Inter],
            oracle: false,
            max_train_windows: 0,
            traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// drives simulation, splits, weight init and bootstrap draws
    pub seed: u64,
    /// output root; `--out`, then this, then `$INSOLE_VGRF_OUT`, then
    /// `./insole-vgrf-out`
    pub out: Option<PathBuf>,
    /// worker threads, 0 = all cores
    pub jobs: usize,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub simulate: SynthConfig,
    pub preprocess: PreprocessConfig,
    /// model for `train`; hyperparameters also used by `evaluate`
    pub model: ModelConfig,
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            out: None,
            jobs: 0,
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            simulate: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Applies command-line overrides and pushes the run seed into every
    /// stage.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>, jobs: Option<usize>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if out.is_some() {
            self.out = out;
        }
        if let Some(j) = jobs {
            self.jobs = j;
        }
        self.simulate.seed = self.seed;
        self.model.train.seed = self.seed;
        self.model.forest.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.simulate.subjects == 0 || self.simulate.speeds.is_empty() {
            return bad("simulate needs at least one subject and one speed");
        }
        if self.simulate.speeds.iter().any(|s| !(*s > 0.0)) {
            return bad("simulate.speeds must be positive");
        }
        if !(self.simulate.duration_s > 0.0) {
            return bad("simulate.duration_s must be positive");
        }
        if self.model.train.epochs == 0 || self.model.train.batch_size == 0 {
            return bad("model.train.epochs and batch_size must be positive");
        }
        if !(self.model.train.learning_rate > 0.0) {
            return bad("model.train.learning_rate must be positive");
        }
        if self.model.lstm.hidden == 0 || self.model.lstm.layers == 0 {
            return bad("model.lstm.hidden and layers must be positive");
        }
        if !(0.0..1.0).contains(&self.model.lstm.dropout) {
            return bad("model.lstm.dropout must be in [0, 1)");
        }
        if self.evaluate.feature_sets.is_empty() || self.evaluate.protocols.is_empty() {
            return bad("evaluate needs at least one feature set and protocol");
        }
        if self.evaluate.models.is_empty() && !self.evaluate.oracle {
            return bad("evaluate needs at least one model or oracle = true");
        }
        Ok(())
    }

    pub fn out_root(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn stage(&self, custom: &Option<PathBuf>, name: &str) -> PathBuf {
        let root = self.out_root();
        match custom {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => root.join(p),
            None => root.join(name),
        }
    }

    pub fn trials_dir(&self) -> PathBuf {
        self.stage(&self.paths.trials, "trials")
    }

    pub fn windows_dir(&self) -> PathBuf {
        self.stage(&self.paths.windows, "windows")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.stage(&self.paths.models, "models")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.stage(&self.paths.eval, "eval")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.stage(&self.paths.report, "report")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
