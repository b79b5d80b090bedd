//! Experiment configuration file (TOML).
//!
//! Every section is optional and falls back to the built-in defaults;
//! unknown keys anywhere are rejected.
//!
//! ```toml
//! seed = 7
//! out_dir = "runs"
//! snrs_db = [5, 10, 15, 20, 25, 30]
//!
//! [corpus]
//! n_train = 500
//! n_test = 100
//! # manifest = "data/manifest.tsv"
//!
//! [distortion]
//! max_speed_ratio = 3.0
//!
//! [features]
//! normalize = true
//!
//! [model]
//! channels = 64
//! dilations = [1, 2, 4, 8]
//!
//! [train]
//! epochs = 30
//! batch_size = 32
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tcan_core::augment::{DistortionClass, DistortionDefaults, STANDARD_SNRS_DB, SNR_CAP_DB};
use tcan_core::features::{FeatureConfig, FeatureExtractor};
use tcan_core::model::TcanConfig;
use tcan_core::trainer::TrainHyper;

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "TCANLAB_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Corpus manifest to load instead of generating a synthetic corpus.
    pub manifest: Option<PathBuf>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_test: 100,
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub snrs_db: Vec<f64>,
    pub corpus: CorpusConfig,
    pub distortion: DistortionDefaults,
    pub features: FeatureConfig,
    pub model: TcanConfig,
    pub train: TrainHyper,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("runs"),
            snrs_db: STANDARD_SNRS_DB.to_vec(),
            corpus: CorpusConfig::default(),
            distortion: DistortionDefaults::default(),
            features: FeatureConfig::default(),
            model: TcanConfig::default(),
            train: TrainHyper::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses `path`; a relative manifest path is taken relative to the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let (Some(m), Some(dir)) = (&config.corpus.manifest, path.parent()) {
            if m.is_relative() {
                config.corpus.manifest = Some(dir.join(m));
            }
        }
        Ok(config)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.corpus.n_train == 0 || self.corpus.n_test == 0 {
            return bad(format!(
                "corpus needs clips in both splits (n_train = {}, n_test = {})",
                self.corpus.n_train, self.corpus.n_test
            ));
        }
        if self.snrs_db.is_empty() {
            return bad("snrs_db is empty".into());
        }
        for &snr in &self.snrs_db {
            validate_snr(snr)?;
        }
        self.model.validate()?;
        if self.model.n_classes != DistortionClass::ALL.len() {
            return bad(format!(
                "model.n_classes = {} but the task has {} distortion classes",
                self.model.n_classes,
                DistortionClass::ALL.len()
            ));
        }
        self.train.validate()?;
        FeatureExtractor::new(self.features.clone())?;
        if self.features.n_filters != self.model.input_dim {
            return bad(format!(
                "features.n_filters = {} but model.input_dim = {}",
                self.features.n_filters, self.model.input_dim
            ));
        }
        Ok(())
    }
}

pub fn validate_snr(snr: f64) -> Result<()> {
    if !snr.is_finite() || snr > SNR_CAP_DB {
        return Err(CliError::Config(format!("SNR {snr} dB is outside the supported range (finite, ≤ {SNR_CAP_DB} dB)")));
    }
    Ok(())
}

/// Run seed: command line, then config file, then `TCANLAB_SEED`, then 0.
pub fn resolve_seed(cli: Option<u64>, file: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = cli.or(file) {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Ok(0),
    }
}

pub fn seed_from_env(cli: Option<u64>, file: Option<u64>) -> Result<u64> {
    resolve_seed(cli, file, std::env::var(SEED_ENV).ok().as_deref())
}
