//! Dataset assembly, mini-batch Adam training with per-epoch decay, and
//! evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;
use crate::augment::{apply_distortion, AugmentError, DistortionClass, DistortionDefaults, DistortionSpec};
use crate::features::{FeatureError, FeatureExtractor, FeatureMatrix};
use crate::model::{config_hash, ForwardMode, ModelError, Tcan};
use crate::data_io::Split;
use crate::seed::{derive_seed, rng_from, STREAM_DISTORT, STREAM_DROPOUT, STREAM_SHUFFLE, STREAM_SPLIT};
use crate::tensor::{AdamConfig, AdamState, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("clip {index}: {source}")]
    Distortion { index: usize, source: AugmentError },
    #[error("clip {index}: {source}")]
    Features { index: usize, source: FeatureError },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (max |param| = {max_abs_param:e})")]
    NonFinite { epoch: usize, batch: usize, max_abs_param: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("malformed report: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Set from the run seed, never from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            initial_lr: 0.001,
            lr_decay: 0.95,
            epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainHyper {
    /// Learning rate in effect during zero-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial_lr * self.lr_decay.powi(epoch as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) || !(self.lr_decay > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidArgument(format!(
                "hyperparameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureMatrix,
    pub class: DistortionClass,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut c = vec![0; n_classes];
        for e in &self.examples {
            c[e.class.index()] += 1;
        }
        c
    }
}

/// Distortion seed for one split, so train and test corruption are drawn
/// independently from a single run seed.
pub fn split_distortion_seed(seed: u64, split: Split) -> u64 {
    derive_seed(seed, STREAM_SPLIT, split as u64)
}

/// Distorts clip `i` with class `i mod 5` at `snr_db` and featurizes it.
pub fn build_dataset(
    corpus: &[AudioClip],
    snr_db: f64,
    seed: u64,
    defaults: &DistortionDefaults,
    extractor: &mut FeatureExtractor,
) -> Result<Dataset> {
    if corpus.is_empty() {
        return Err(TrainError::InvalidArgument("corpus is empty".into()));
    }
    let mut examples = Vec::with_capacity(corpus.len());
    for (index, clip) in corpus.iter().enumerate() {
        let class = DistortionClass::ALL[index % DistortionClass::ALL.len()];
        let spec = DistortionSpec {
            params: defaults.params_for(class),
            target_snr_db: snr_db,
            seed: derive_seed(seed, STREAM_DISTORT, index as u64),
        };
        let (y, class) =
            apply_distortion(clip, &spec).map_err(|source| TrainError::Distortion { index, source })?;
        let features = extractor
            .extract(&y)
            .map_err(|source| TrainError::Features { index, source })?;
        examples.push(Example { features, class });
    }
    Ok(Dataset { examples })
}

/// Index of the largest logit; ties go to the lowest index.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_counts(n: usize, counts: Vec<u64>) -> Result<Self> {
        if n == 0 || counts.len() != n * n {
            return Err(TrainError::Report(format!(
                "confusion matrix needs {} counts, got {}",
                n * n,
                counts.len()
            )));
        }
        Ok(Self { n, counts })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.n + predicted] += 1;
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.n).map(|r| (0..self.n).map(|c| self.get(r, c)).sum()).collect()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.trace() as f64 / t as f64,
        }
    }

    /// Header row `true\pred,C1,…`, then one row per true class.
    pub fn to_csv(&self) -> String {
        let names: Vec<String> = (1..=self.n).map(|i| format!("C{i}")).collect();
        let mut s = format!("true\\pred,{}\n", names.join(","));
        for r in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|c| self.get(r, c).to_string()).collect();
            let _ = writeln!(s, "{},{}", names[r], row.join(","));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| TrainError::Report("empty confusion CSV".into()))?;
        let n = header.split(',').count() - 1;
        let mut counts = Vec::with_capacity(n * n);
        for (r, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != n + 1 {
                return Err(TrainError::Report(format!("confusion row {r} has {} cells", cells.len())));
            }
            for c in &cells[1..] {
                counts.push(
                    c.trim()
                        .parse()
                        .map_err(|_| TrainError::Report(format!("bad count {c:?} in row {r}")))?,
                );
            }
        }
        Self::from_counts(n, counts)
    }
}

/// Accuracy and confusion matrix of `model` over `data`.
pub fn evaluate(model: &Tcan, data: &Dataset) -> Result<(f64, ConfusionMatrix)> {
    if data.is_empty() {
        return Err(TrainError::InvalidArgument("evaluation set is empty".into()));
    }
    let mut cm = ConfusionMatrix::new(model.config().n_classes);
    let mut correct = 0usize;
    for ex in &data.examples {
        let pred = predict(&model.logits(&ex.features)?);
        cm.record(ex.class.index(), pred);
        correct += usize::from(pred == ex.class.index());
    }
    Ok((correct as f64 / data.len() as f64, cm))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the epoch's mini-batch losses.
    pub train_loss: f64,
    /// Running accuracy of the training forward passes within the epoch.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub seed: u64,
    pub config_hash: String,
    pub wall_clock_s: f64,
    pub epochs: Vec<EpochStats>,
    /// Confusion matrix on the test set, or on the training set when no
    /// test set was supplied.
    pub confusion: ConfusionMatrix,
    /// Free-form run labels (SNR, attention flag, …).
    pub labels: BTreeMap<String, String>,
}

impl TrainReport {
    pub fn final_epoch(&self) -> &EpochStats {
        self.epochs.last().expect("reports hold at least one epoch")
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// Key/value block, the per-epoch table, then the confusion matrix.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# tcanlab train report v1\n");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        let _ = writeln!(s, "wall_clock_s = {:.3}", self.wall_clock_s);
        let _ = writeln!(s, "epochs = {}", self.epochs.len());
        let _ = writeln!(s, "final_accuracy = {}", self.confusion.accuracy());
        for (k, v) in &self.labels {
            let _ = writeln!(s, "label.{k} = {v}");
        }
        s.push_str("\n[epochs]\nepoch,lr,train_loss,train_accuracy,test_accuracy\n");
        for e in &self.epochs {
            let test = e.test_accuracy.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.lr, e.train_loss, e.train_accuracy, test);
        }
        s.push_str("\n[confusion]\n");
        s.push_str(&self.confusion.to_csv());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| TrainError::Report(m);
        let mut section = "";
        let mut kv = BTreeMap::new();
        let mut epoch_lines = Vec::new();
        let mut confusion_lines = Vec::new();
        for line in text.lines() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if t.starts_with('[') && t.ends_with(']') {
                section = match t {
                    "[epochs]" => "epochs",
                    "[confusion]" => "confusion",
                    other => return Err(bad(format!("unknown section {other}"))),
                };
                continue;
            }
            match section {
                "" => {
                    let (k, v) = t.split_once('=').ok_or_else(|| bad(format!("expected key = value, got {t:?}")))?;
                    kv.insert(k.trim().to_string(), v.trim().to_string());
                }
                "epochs" => epoch_lines.push(t),
                _ => confusion_lines.push(t),
            }
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing key {k}")));
        let seed = get("seed")?.parse().map_err(|_| bad("seed is not an integer".into()))?;
        let config_hash = get("config_hash")?.clone();
        let wall_clock_s = get("wall_clock_s")?.parse().map_err(|_| bad("bad wall_clock_s".into()))?;
        let n_epochs: usize = get("epochs")?.parse().map_err(|_| bad("bad epochs".into()))?;

        let mut epochs = Vec::new();
        for line in epoch_lines.iter().skip(1) {
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 5 {
                return Err(bad(format!("epoch row has {} fields", c.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
            epochs.push(EpochStats {
                epoch: c[0].parse().map_err(|_| bad(format!("bad epoch {:?}", c[0])))?,
                lr: num(c[1])?,
                train_loss: num(c[2])?,
                train_accuracy: num(c[3])?,
                test_accuracy: if c[4].is_empty() { None } else { Some(num(c[4])?) },
            });
        }
        if epochs.len() != n_epochs || n_epochs == 0 {
            return Err(bad(format!("header says {n_epochs} epochs, table has {}", epochs.len())));
        }
        let confusion = ConfusionMatrix::from_csv(&confusion_lines.join("\n"))?;
        let labels = kv
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("label.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Self {
            seed,
            config_hash,
            wall_clock_s,
            epochs,
            confusion,
            labels,
        })
    }
}

/// Shuffled mini-batch training. Gradients of a batch are summed in sample
/// order and divided by the batch size (mean loss).
pub fn train(model: &mut Tcan, train_set: &Dataset, test_set: Option<&Dataset>, hyper: &TrainHyper) -> Result<TrainReport> {
    train_with_progress(model, train_set, test_set, hyper, |_| {})
}

pub fn train_with_progress(
    model: &mut Tcan,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    hyper: &TrainHyper,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    hyper.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::InvalidArgument("training set is empty".into()));
    }
    let start = Instant::now();
    let mut adam = AdamState::new(model.params().tensors(), AdamConfig::default());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        let lr = hyper.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng_from(derive_seed(hyper.seed, STREAM_SHUFFLE, epoch as u64)));

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        for (batch, idx) in order.chunks(hyper.batch_size).enumerate() {
            let mut grads: Vec<Vec<f64>> = model.params().tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
            let mut batch_loss = 0.0;
            for (j, &i) in idx.iter().enumerate() {
                let ex = &train_set.examples[i];
                let step_seed = derive_seed(hyper.seed, STREAM_DROPOUT, (epoch * train_set.len() + batch * hyper.batch_size + j) as u64);
                let (loss, logits, g) = match model.loss_and_grads(&ex.features, ex.class.index(), ForwardMode::Train { seed: step_seed }) {
                    Ok(r) => r,
                    Err(ModelError::Tensor(TensorError::NonFinite { .. })) => {
                        return Err(TrainError::NonFinite {
                            epoch,
                            batch,
                            max_abs_param: model.params().max_abs(),
                        })
                    }
                    Err(e) => return Err(e.into()),
                };
                batch_loss += loss;
                correct += usize::from(predict(&logits) == ex.class.index());
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / idx.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch,
                    max_abs_param: model.params().max_abs(),
                });
            }
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            adam.step(model.params_mut().tensors_mut(), &grads, lr)?;
            loss_sum += batch_loss;
            batches += 1;
        }

        let test_accuracy = match test_set {
            Some(t) => Some(evaluate(model, t)?.0),
            None => None,
        };
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy,
        };
        on_epoch(&stats);
        epochs.push(stats);
    }

    let (_, confusion) = evaluate(model, test_set.unwrap_or(train_set))?;
    Ok(TrainReport {
        seed: hyper.seed,
        config_hash: config_hash(model.config()),
        wall_clock_s: start.elapsed().as_secs_f64(),
        epochs,
        confusion,
        labels: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let h = TrainHyper::default();
        assert_eq!(h.lr_at(0), 0.001);
        assert!((h.lr_at(3) - 0.000857375).abs() < 1e-18);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(predict(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(predict(&[2.0, 2.0]), 0);
        assert_eq!(predict(&[-1.0, -0.5, -2.0]), 1);
    }

    #[test]
    fn confusion_matrix_bookkeeping() {
        let mut cm = ConfusionMatrix::new(3);
        for (t, p) in [(0, 0), (0, 1), (1, 1), (2, 0), (2, 2), (2, 2)] {
            cm.record(t, p);
        }
        assert_eq!(cm.row_sums(), vec![2, 1, 3]);
        assert_eq!(cm.trace(), 4);
        assert!((cm.accuracy() - 4.0 / 6.0).abs() < 1e-15);
        assert_eq!(ConfusionMatrix::from_csv(&cm.to_csv()).unwrap(), cm);
        assert!(ConfusionMatrix::from_csv("true\\pred,C1,C2\nC1,1\n").is_err());
    }

    #[test]
    fn report_text_round_trip() {
        let mut cm = ConfusionMatrix::new(5);
        cm.record(0, 0);
        cm.record(4, 1);
        let report = TrainReport {
            seed: 9,
            config_hash: "abc".into(),
            wall_clock_s: 1.5,
            epochs: vec![
                EpochStats { epoch: 0, lr: 0.001, train_loss: 1.234567890123, train_accuracy: 0.2, test_accuracy: Some(0.5) },
                EpochStats { epoch: 1, lr: 0.00095, train_loss: 0.1, train_accuracy: 0.4, test_accuracy: None },
            ],
            confusion: cm,
            labels: [("snr_db".to_string(), "5".to_string())].into(),
        };
        let back = TrainReport::from_text(&report.to_text()).unwrap();
        assert_eq!(back, report);
        assert!(TrainReport::from_text("seed = 1\n").is_err());
        assert!(TrainReport::from_text(&report.to_text().replace("epochs = 2", "epochs = 3")).is_err());
    }
}
