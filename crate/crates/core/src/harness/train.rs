//! Seeded mini-batch training with validation-based checkpoint selection.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use log::info;
use serde::{Deserialize, Serialize};

use super::evaluate::evaluate;
use super::metrics::MetricsReport;
use super::optimizer::{clip_grad_norm, Optimizer, OptimizerKind};
use crate::data::{split, Dataset, SplitPolicy, Splits};
use crate::encoders::Conversation;
use crate::error::{Error, Result};
use crate::model::{checkpoint, Model, ModelConfig};
use crate::numerics::{Gradients, Rng};

/// Model settings plus the optimization schedule.
///
/// None of the optimization settings come from the method description,
/// which leaves them open: Adam at 1e-3, 8 conversations per step,
/// clipping at global norm 5 and early stopping after 20 epochs without a
/// better validation weighted F1 are this crate's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    /// Step size; 0 freezes the parameters.
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    /// Conversations per step.
    pub batch_size: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip: f64,
    /// Stop after this many epochs without a better validation weighted F1;
    /// 0 disables early stopping.
    pub patience: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            epochs: 100,
            batch_size: 8,
            clip: 5.0,
            patience: 20,
            seed: 0,
            out: PathBuf::from("mmdfn-run"),
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.clip >= 0.0) {
            return Err(Error::Config(format!("clip must be >= 0, got {}", self.clip)));
        }
        Ok(())
    }

    pub fn split_policy(&self) -> SplitPolicy {
        SplitPolicy::Fractions {
            train: self.train_fraction,
            val: self.val_fraction,
            test: self.test_fraction,
            seed: self.seed,
        }
    }

    /// Every key a config file may use.
    pub fn known_keys() -> Vec<String> {
        match toml::Table::try_from(TrainConfig::default()) {
            Ok(t) => t.keys().cloned().collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Parses a TOML config; unknown keys are errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("config: {e}")))?;
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let known = Self::known_keys();
        if let Some(bad) = table.keys().find(|k| !known.contains(k)) {
            return Err(Error::Config(format!("unknown config key `{bad}`")));
        }
        let config: TrainConfig = table.try_into().map_err(|e| Error::Config(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// One row of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Utterance-weighted mean of the batch objectives during the epoch.
    pub train_loss: f64,
    /// Accuracy on the training split after the epoch's updates.
    pub train_acc: f64,
    pub val_acc: f64,
    pub val_wf1: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_acc,val_wf1";

/// Comma-separated epoch log with a header line. Floats use the shortest
/// round-tripping form.
pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for e in log {
        out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_acc, e.val_wf1));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation weighted F1.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val: MetricsReport,
    pub log: Vec<EpochLog>,
}

fn group_norms(grads: &Gradients) -> IndexMap<String, f64> {
    let mut out: IndexMap<String, f64> = IndexMap::new();
    for (name, g) in grads {
        let group = name.split('.').take(3).collect::<Vec<_>>().join(".");
        *out.entry(group).or_default() += g.sum_squares();
    }
    out.values_mut().for_each(|v| *v = v.sqrt());
    out
}

fn divergence(epoch: usize, loss: f64, grads: &Gradients) -> Error {
    let norms = group_norms(grads)
        .into_iter()
        .map(|(g, n)| format!("{g}={n:e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Error::Divergence {
        epoch,
        detail: format!("loss {loss}; gradient norms: {norms}"),
    }
}

/// Trains on `train`, selecting the checkpoint by weighted F1 on `val`.
pub fn train(config: &TrainConfig, train: &Dataset, val: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    if train.class_names() != val.class_names() || train.feature_dims() != val.feature_dims() {
        return Err(Error::Contract("train and validation splits disagree on classes or dims".into()));
    }
    let mut model = Model::init(
        config.model.clone(),
        train.feature_dims(),
        train.class_names().to_vec(),
        config.seed,
    )?;
    let spec = model.loss_spec(&train.labels());
    let mut optimizer = Optimizer::new(config.optimizer, config.lr);
    let mut order_rng = Rng::new(config.seed).derive(2);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best: Option<(usize, MetricsReport, Model)> = None;
    let mut log = Vec::new();
    for epoch in 1..=config.epochs {
        order_rng.shuffle(&mut order);
        let mut weighted_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Conversation> = chunk.iter().map(|&i| &train.conversations()[i]).collect();
            let utterances: usize = batch.iter().map(|c| c.len()).sum();
            let mut outcome = model.gradients(&batch, &spec)?;
            if !outcome.loss.is_finite() || outcome.gradients.values().any(|g| !g.is_finite()) {
                return Err(divergence(epoch, outcome.loss, &outcome.gradients));
            }
            clip_grad_norm(&mut outcome.gradients, config.clip);
            optimizer.step(&mut model.params, &outcome.gradients)?;
            weighted_loss += outcome.loss * utterances as f64;
        }
        let train_acc = evaluate(&model, train)?.accuracy;
        let val_report = evaluate(&model, val)?;
        let entry = EpochLog {
            epoch,
            train_loss: weighted_loss / train.utterance_count() as f64,
            train_acc,
            val_acc: val_report.accuracy,
            val_wf1: val_report.weighted_f1,
        };
        info!(
            "epoch {epoch}: loss {:.5} train acc {:.4} val acc {:.4} val w-f1 {:.4}",
            entry.train_loss, entry.train_acc, entry.val_acc, entry.val_wf1
        );
        log.push(entry);
        let improved = best.as_ref().is_none_or(|(_, r, _)| val_report.weighted_f1 > r.weighted_f1);
        if improved {
            best = Some((epoch, val_report, model.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        if config.patience > 0 && epoch - best_epoch >= config.patience {
            info!("no validation improvement for {} epochs, stopping", config.patience);
            break;
        }
    }
    let (best_epoch, best_val, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val,
        log,
    })
}

/// Result of a full run: split, train, test.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub splits: Splits,
    pub training: TrainOutcome,
    pub test: MetricsReport,
}

/// Splits `dataset` by the configured fractions, trains, and evaluates the
/// selected checkpoint on the test split.
pub fn run(config: &TrainConfig, dataset: &Dataset) -> Result<RunOutcome> {
    config.validate()?;
    let splits = split(dataset, &config.split_policy())?;
    let training = train(config, &splits.train, &splits.val)?;
    let test = evaluate(&training.model, &splits.test)?;
    Ok(RunOutcome { splits, training, test })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes `config.toml`, `log.csv`, `metrics.json` (test split) and the
/// `checkpoint/` directory under `dir`.
pub fn write_run(dir: &Path, config: &TrainConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config.toml"), &config.to_toml())?;
    write_file(&dir.join("log.csv"), &log_csv(&outcome.training.log))?;
    write_file(&dir.join("metrics.json"), &outcome.test.to_json())?;
    checkpoint::save(&outcome.training.model, &dir.join("checkpoint"))
}
