//! One training run: corpus, distortion at a fixed SNR, features, training
//! and the files a run leaves behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use tcan_core::audio::AudioClip;
use tcan_core::data_io::{build_corpus, load_clips, CorpusManifest, Split};
use tcan_core::features::FeatureExtractor;
use tcan_core::model::{save_checkpoint, Tcan, TrainingMeta};
use tcan_core::trainer::{build_dataset, split_distortion_seed, train_with_progress, Dataset, EpochStats, TrainReport};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "report.txt";
pub const CONFUSION_FILE: &str = "confusion.csv";

pub struct Corpus {
    pub train: Vec<AudioClip>,
    pub test: Vec<AudioClip>,
}

/// Loads the configured manifest, or generates the synthetic corpus.
pub fn load_corpus(config: &ExperimentConfig, seed: u64) -> Result<Corpus> {
    let (manifest, root) = match &config.corpus.manifest {
        Some(path) => (
            CorpusManifest::load(path)?,
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (build_corpus(config.corpus.n_train, config.corpus.n_test, seed)?, PathBuf::new()),
    };
    let corpus = Corpus {
        train: load_clips(&manifest, Split::Train, &root)?,
        test: load_clips(&manifest, Split::Test, &root)?,
    };
    if corpus.train.is_empty() || corpus.test.is_empty() {
        return Err(CliError::Data("manifest must list both train and test clips".into()));
    }
    Ok(corpus)
}

pub fn build_datasets(config: &ExperimentConfig, corpus: &Corpus, seed: u64, snr_db: f64) -> Result<(Dataset, Dataset)> {
    let mut extractor = FeatureExtractor::new(config.features.clone())?;
    let train = build_dataset(
        &corpus.train,
        snr_db,
        split_distortion_seed(seed, Split::Train),
        &config.distortion,
        &mut extractor,
    )?;
    let test = build_dataset(
        &corpus.test,
        snr_db,
        split_distortion_seed(seed, Split::Test),
        &config.distortion,
        &mut extractor,
    )?;
    Ok((train, test))
}

pub struct RunOutcome {
    pub model: Tcan,
    pub report: TrainReport,
}

/// Trains one model at `snr_db`. `attention` overrides the config flag.
pub fn run(
    config: &ExperimentConfig,
    corpus: &Corpus,
    seed: u64,
    snr_db: f64,
    attention: bool,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<RunOutcome> {
    let (train_set, test_set) = build_datasets(config, corpus, seed, snr_db)?;
    let model_config = tcan_core::model::TcanConfig {
        attention_enabled: attention,
        ..config.model.clone()
    };
    let mut model = Tcan::init(model_config, seed)?;
    let hyper = tcan_core::trainer::TrainHyper {
        seed,
        ..config.train.clone()
    };
    let mut report = train_with_progress(&mut model, &train_set, Some(&test_set), &hyper, on_epoch)?;
    let labels: BTreeMap<String, String> = [
        ("snr_db", snr_db.to_string()),
        ("attention", if attention { "on" } else { "off" }.to_string()),
        ("n_train", train_set.len().to_string()),
        ("n_test", test_set.len().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    report.labels = labels;
    Ok(RunOutcome { model, report })
}

/// Writes checkpoint, report and confusion CSV into `dir`.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    let last = outcome.report.final_epoch();
    let meta = TrainingMeta {
        epoch: last.epoch + 1,
        seed: outcome.report.seed,
        final_lr: last.lr,
    };
    let ckpt = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &outcome.model, &meta).map_err(|e| match e {
        tcan_core::model::CheckpointError::Io(source) => CliError::Io { path: ckpt.clone(), source },
        other => other.into(),
    })?;
    let report = dir.join(REPORT_FILE);
    fs::write(&report, outcome.report.to_text()).map_err(CliError::io(&report))?;
    let csv = dir.join(CONFUSION_FILE);
    fs::write(&csv, outcome.report.confusion.to_csv()).map_err(CliError::io(&csv))?;
    Ok(())
}
