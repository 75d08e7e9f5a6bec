//! Experiment configuration, read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use denoise_core::dsp::StftConfig;
use denoise_core::mlp::{LrSchedule, TrainConfig};
use denoise_core::pipeline::{FeatureConfig, LogMmseConfig, LossMode};
use denoise_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Manifests, mixtures, models, enhanced audio and reports go here.
    pub work_dir: PathBuf,
    pub clean_train: PathBuf,
    pub clean_validation: PathBuf,
    pub clean_test: PathBuf,
    /// Noises for training mixtures.
    pub noise_train: PathBuf,
    /// Held-out noises, used for validation and test mixtures.
    pub noise_test: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            work_dir: "work".into(),
            clean_train: "corpus/clean/train".into(),
            clean_validation: "corpus/clean/validation".into(),
            clean_test: "corpus/clean/test".into(),
            noise_train: "corpus/noise/train".into(),
            noise_test: "corpus/noise/test".into(),
        }
    }
}

/// Sizes of the synthetic corpus and of each mixture set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub train_utterances: usize,
    pub validation_utterances: usize,
    pub test_utterances: usize,
    pub utterance_secs: f64,
    pub noise_secs: f64,
    pub train_mixes: usize,
    pub validation_mixes: usize,
    pub test_mixes: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train_utterances: 200,
            validation_utterances: 30,
            test_utterances: 30,
            utterance_secs: 1.0,
            noise_secs: 8.0,
            train_mixes: 200,
            validation_mixes: 30,
            test_mixes: 180,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![2048, 2048, 2048] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lambda: f64,
    pub lr: LrSchedule,
    pub epochs: usize,
    pub loss: LossMode,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { batch_size: t.batch_size, lambda: t.lambda, lr: t.lr, epochs: t.epochs, loss: LossMode::Mse }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub feature: FeatureConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub logmmse: LogMmseConfig,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn default_seed() -> u64 {
    1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: default_seed(),
            paths: PathsConfig::default(),
            corpus: CorpusConfig::default(),
            stft: StftConfig::default(),
            feature: FeatureConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            logmmse: LogMmseConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, if base.as_os_str().is_empty() { PathBuf::from(".") } else { base })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.feature.validate()?;
        self.train_config().validate()?;
        if self.model.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if !(self.corpus.utterance_secs > 0.0 && self.corpus.noise_secs > 0.0) {
            return Err(Error::Config("corpus durations must be positive".into()));
        }
        Ok(())
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// `p` resolved against the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn work_dir(&self) -> PathBuf {
        self.resolve(&self.paths.work_dir)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            lambda: self.train.lambda,
            lr: self.train.lr,
            epochs: self.train.epochs,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use denoise_core::pipeline::InputMode;

    #[test]
    fn defaults_and_round_trip() {
        let cfg = ExperimentConfig::from_toml("", ".").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.feature.tau, 5);
        assert_eq!(cfg.train.epochs, 40);
        assert_eq!(cfg.model.hidden, vec![2048; 3]);

        let mut custom = cfg.clone();
        custom.feature.mode = InputMode::Bed;
        custom.train.loss = LossMode::Masking;
        custom.model.hidden = vec![256; 3];
        custom.stft.power_floor = 1e-9;
        let back = ExperimentConfig::from_toml(&custom.to_toml(), ".").unwrap();
        assert_eq!(back, custom);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(matches!(ExperimentConfig::from_toml("seed = \"x\"", "."), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("bogus = 1", "."), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("[train]\nbatch_size = 0", "."), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("[feature]\nmode = \"bswd\"", "."), Err(Error::Config(_))));
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let cfg = ExperimentConfig::from_toml("[paths]\nwork_dir = \"out\"\nclean_train = \"/abs/c\"\nclean_validation = \"v\"\nclean_test = \"t\"\nnoise_train = \"n\"\nnoise_test = \"m\"", "/base").unwrap();
        assert_eq!(cfg.work_dir(), PathBuf::from("/base/out"));
        assert_eq!(cfg.resolve(&cfg.paths.clean_train), PathBuf::from("/abs/c"));
    }
}
