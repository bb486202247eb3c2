use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::data::EvalUnit;
use super::synthetic::SyntheticCorpus;
use crate::audio_io::{Snr, PAPER_SNRS};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::models::{Architecture, TaskHead};
use crate::neural::{AdamConfig, NumericMode};

/// Where clips come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataConfig {
    Synthetic(SyntheticCorpus),
    Manifest {
        path: PathBuf,
        /// Directory that relative audio paths resolve against; defaults to
        /// the manifest's directory.
        #[serde(default)]
        audio_root: Option<PathBuf>,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticCorpus::default())
    }
}

/// One experiment: a task, a model family, its input features and the
/// training and evaluation settings. Defaults are the published settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub task: TaskHead,
    pub arch: Architecture,
    /// One kind for a single-feature network, two for a fusion network.
    pub features: Vec<FeatureKind>,
    pub snrs: Vec<Snr>,
    pub seed: u64,
    pub epochs: usize,
    /// Epochs for each fusion branch before joint fine-tuning; defaults to `epochs`.
    pub pretrain_epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub numeric_mode: NumericMode,
    pub folds: usize,
    /// Run only the first few folds.
    pub fold_limit: Option<usize>,
    pub validation_fraction: f64,
    pub eval_unit: EvalUnit,
    /// Mix pink noise into training clips at this SNR (off by default).
    pub train_noise_snr: Option<Snr>,
    pub gru_width_per_direction: bool,
    pub workers: usize,
    /// Noise recording for test mixing; seeded pink noise when absent.
    pub noise: Option<PathBuf>,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            name: None,
            task: TaskHead::Binary,
            arch: Architecture::Cnn,
            features: vec![FeatureKind::Spectrogram, FeatureKind::Cepstrogram],
            snrs: PAPER_SNRS.to_vec(),
            seed: 1,
            epochs: 100,
            pretrain_epochs: None,
            batch_size: 256,
            learning_rate: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            numeric_mode: NumericMode::F32,
            folds: 5,
            fold_limit: None,
            validation_fraction: 0.2,
            eval_unit: EvalUnit::Clip,
            train_noise_snr: None,
            gru_width_per_direction: false,
            workers: 1,
            noise: None,
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        let kinds: Vec<String> = self.features.iter().map(|k| k.to_string()).collect();
        format!("{}/{}/{}", self.task, self.arch, kinds.join("+"))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.features.is_empty() || self.features.len() > 2 {
            return err(format!("1 or 2 feature kinds, got {}", self.features.len()));
        }
        if self.features.len() == 2 && self.features[0] == self.features[1] {
            return err("fusion needs two different feature kinds".into());
        }
        if self.snrs.is_empty() {
            return err("empty SNR list".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.workers == 0 {
            return err("epochs, batch_size and workers must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return err("validation_fraction must lie in [0, 1)".into());
        }
        if self.folds < 2 {
            return err("at least two folds".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative data and noise paths resolve against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(n) = &self.noise {
            self.noise = Some(base.join(n));
        }
        if let DataConfig::Manifest { path, audio_root } = &mut self.data {
            *path = base.join(&*path);
            if let Some(r) = audio_root {
                *r = base.join(&*r);
            }
        }
    }
}

/// Per-cell overrides on top of a suite's base config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub name: Option<String>,
    pub task: Option<TaskHead>,
    pub arch: Option<Architecture>,
    pub features: Option<Vec<FeatureKind>>,
    pub seed: Option<u64>,
    pub snrs: Option<Vec<Snr>>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub numeric_mode: Option<NumericMode>,
}

impl CellConfig {
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.name = self.name.clone().or(c.name);
        c.task = self.task.unwrap_or(c.task);
        c.arch = self.arch.unwrap_or(c.arch);
        if let Some(f) = &self.features {
            c.features = f.clone();
        }
        c.seed = self.seed.unwrap_or(c.seed);
        if let Some(s) = &self.snrs {
            c.snrs = s.clone();
        }
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.learning_rate = self.learning_rate.unwrap_or(c.learning_rate);
        c.numeric_mode = self.numeric_mode.unwrap_or(c.numeric_mode);
        c
    }
}

/// A grid of experiments sharing a base config.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default)]
    pub base: ExperimentConfig,
    #[serde(default, rename = "cell")]
    pub cells: Vec<CellConfig>,
    /// Cells run concurrently up to this many at a time.
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn experiments(&self) -> Vec<ExperimentConfig> {
        self.cells.iter().map(|c| c.apply(&self.base)).collect()
    }
}
