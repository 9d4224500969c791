//! Mini-batch training with Adam.

use kagrmn_core::{Adam, Graph, Metrics, ModelConfig, PreparedSample, Sample};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::error::{Error, Result};
use crate::vocab::{build_relations, build_vocabulary};

/// One JSON line per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss with dropout active.
    pub loss: f64,
    /// Accuracy on the training set in evaluation mode after the epoch.
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_macro_f1: Option<f64>,
}

pub struct Trainer {
    pub bundle: Bundle,
    train: Vec<PreparedSample>,
    raw: Vec<Sample>,
    optimizer: Adam<f32>,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    /// Builds vocabularies from `samples` and initializes the model.
    pub fn new(config: ModelConfig, samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyData);
        }
        config.validate()?;
        let vocab = build_vocabulary(samples);
        let relations = build_relations(samples, config.max_distance);
        let bundle = Bundle::new(config, vocab, relations)?;
        let train = samples.iter().map(|s| bundle.prepare(s)).collect::<Result<Vec<_>>>()?;
        let optimizer = Adam::new(&bundle.store, bundle.config.learning_rate);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(bundle.config.seed);
        shuffle_rng.set_stream(1);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(bundle.config.seed);
        dropout_rng.set_stream(2);
        Ok(Self {
            bundle,
            train,
            raw: samples.to_vec(),
            optimizer,
            shuffle_rng,
            dropout_rng,
            epoch: 0,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// One pass over the shuffled training set; returns the mean loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let batch_size = self.bundle.config.batch_size;
        let mut total = 0.0;
        for (b, batch) in order.chunks(batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f32;
            self.bundle.store.zero_grad();
            for &i in batch {
                let mut g = Graph::training(self.dropout_rng.next_u64());
                let (loss, _) = self.bundle.model.loss(&mut g, &self.bundle.store, &self.train[i])?;
                let value = g.value(loss).data()[0];
                let grads = g.backward(loss)?;
                self.bundle.store.accumulate(&grads, scale);
                if !value.is_finite() {
                    return Err(self.non_finite(b, "loss"));
                }
                total += value as f64;
            }
            if self.bundle.store.first_non_finite().is_some() {
                return Err(self.non_finite(b, "gradient"));
            }
            self.optimizer.step(&mut self.bundle.store)?;
            if self.bundle.store.first_non_finite().is_some() {
                return Err(self.non_finite(b, "update"));
            }
        }
        self.epoch += 1;
        Ok(total / self.train.len() as f64)
    }

    fn non_finite(&self, batch: usize, fallback: &str) -> Error {
        Error::NonFinite {
            param: self.bundle.store.first_non_finite().unwrap_or(fallback).to_string(),
            epoch: self.epoch + 1,
            batch: batch + 1,
        }
    }

    pub fn train_metrics(&self) -> Result<Metrics> {
        self.bundle.evaluate(&self.raw)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub bundle: Bundle,
    pub logs: Vec<EpochLog>,
    pub train_metrics: Metrics,
    pub eval_metrics: Option<Metrics>,
    /// Snapshot with the best evaluation accuracy, when an eval set was given.
    pub best: Option<(usize, Bundle)>,
}

/// Runs `config.epochs` epochs, calling `on_epoch` after each.
pub fn train(
    config: ModelConfig,
    samples: &[Sample],
    eval: Option<&[Sample]>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutput> {
    let epochs = config.epochs;
    let mut trainer = Trainer::new(config, samples)?;
    let mut logs = Vec::with_capacity(epochs);
    let mut best: Option<(usize, f64, Bundle)> = None;
    let mut train_metrics = trainer.train_metrics()?;
    let mut eval_metrics = None;
    for _ in 0..epochs {
        let loss = trainer.run_epoch()?;
        train_metrics = trainer.train_metrics()?;
        eval_metrics = eval.map(|e| trainer.bundle.evaluate(e)).transpose()?;
        let log = EpochLog {
            epoch: trainer.epochs_run(),
            loss,
            train_accuracy: train_metrics.accuracy,
            eval_accuracy: eval_metrics.as_ref().map(|m| m.accuracy),
            eval_macro_f1: eval_metrics.as_ref().map(|m| m.macro_f1),
        };
        if let Some(acc) = log.eval_accuracy {
            if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
                best = Some((log.epoch, acc, trainer.bundle.clone()));
            }
        }
        on_epoch(&log);
        logs.push(log);
    }
    Ok(TrainOutput {
        bundle: trainer.bundle,
        logs,
        train_metrics,
        eval_metrics,
        best: best.map(|(e, _, b)| (e, b)),
    })
}
