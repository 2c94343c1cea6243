use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{build_batches, EncodedSample};
use crate::diff::{Mode, Tape, Tensor};
use crate::error::{Error, Result};
use crate::labelgraph::TypeAdjacency;
use crate::metrics::{evaluate_scores, EvalReport, MrrConvention};
use crate::model::EntityTyper;
use crate::scalar::Scalar;
use crate::trainer::optim::{Optimizer, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Epochs without dev F1 improvement before stopping; `None` disables.
    pub patience: Option<usize>,
    /// Decision threshold used for the dev F1 that drives early stopping.
    pub eval_threshold: f64,
    pub eval_batch_size: usize,
    pub mrr_convention: MrrConvention,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 1000,
            epochs: 100,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            patience: Some(10),
            eval_threshold: 0.5,
            eval_batch_size: 256,
            mrr_convention: MrrConvention::PerPair,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning_rate = {} must be nonnegative",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::InvalidArgument("batch sizes must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eval_threshold) {
            return Err(Error::InvalidArgument("eval_threshold must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub loss: f64,
    pub batches: usize,
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_f1: Option<f64>,
}

/// Owns the optimizer state and the seeded stream used for shuffling and
/// dropout.
pub struct Trainer<S: Scalar> {
    config: TrainConfig,
    optimizer: Optimizer<S>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig, model: &EntityTyper<S>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer: Optimizer::new(config.optimizer, config.learning_rate, model.params()),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c),
            epoch: 0,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Forward, backward and one optimizer step per batch.
    pub fn train_epoch(&mut self, model: &mut EntityTyper<S>, samples: &[EncodedSample]) -> Result<EpochStats> {
        let batches = build_batches(samples, self.config.batch_size, &mut self.rng)?;
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let (loss, grads) = {
                let mut tape = Tape::with_params(model.params());
                let out = model.forward(&mut tape, batch, Mode::Train, &mut self.rng, false)?;
                let loss = model.loss(&mut tape, &out, batch)?;
                let value = tape.value(loss).item().as_f64();
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        epoch: self.epoch,
                        batch: b,
                    });
                }
                (value, tape.backward(loss)?)
            };
            let store = model.params_mut();
            store.zero_grad();
            store.accumulate(&grads);
            self.optimizer.step(store)?;
            total += loss * batch.len() as f64;
        }
        let stats = EpochStats {
            epoch: self.epoch,
            loss: total / samples.len() as f64,
            batches: batches.len(),
        };
        self.epoch += 1;
        Ok(stats)
    }
}

/// Scores every sample once in eval mode and builds the full report.
pub fn evaluate<S: Scalar>(
    model: &EntityTyper<S>,
    samples: &[EncodedSample],
    threshold: f64,
    adjacency: Option<&TypeAdjacency>,
    config: &TrainConfig,
) -> Result<EvalReport> {
    let scores = model.score(samples, config.eval_batch_size)?;
    let gold: Vec<Vec<usize>> = samples.iter().map(EncodedSample::gold_ids).collect();
    let kinds: Vec<_> = samples.iter().map(|s| s.mention_kind).collect();
    evaluate_scores(&scores, &gold, &kinds, threshold, adjacency, config.mrr_convention)
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters the model holds on return.
    pub best_epoch: Option<usize>,
    pub best_dev_f1: Option<f64>,
}

/// Trains for `config.epochs`. With a dev set, keeps the parameters of the
/// best dev-F1 epoch and stops after `patience` epochs without improvement.
pub fn fit<S: Scalar>(
    model: &mut EntityTyper<S>,
    train: &[EncodedSample],
    dev: Option<&[EncodedSample]>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome> {
    let mut trainer = Trainer::new(config.clone(), model)?;
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor<S>>)> = None;
    let mut since_best = 0usize;
    for _ in 0..config.epochs {
        let stats = trainer.train_epoch(model, train)?;
        let dev_f1 = match dev {
            Some(d) if !d.is_empty() => Some(evaluate(model, d, config.eval_threshold, None, config)?.f1),
            _ => None,
        };
        let entry = EpochLog {
            epoch: stats.epoch,
            loss: stats.loss,
            dev_f1,
        };
        on_epoch(&entry);
        log.push(entry);
        if let Some(f1) = dev_f1 {
            if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
                let snapshot = model.params().iter().map(|(_, p)| p.value.clone()).collect();
                best = Some((stats.epoch, f1, snapshot));
                since_best = 0;
            } else {
                since_best += 1;
                if config.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    let (best_epoch, best_dev_f1) = match best {
        Some((epoch, f1, snapshot)) => {
            for (p, v) in model.params_mut().iter_mut().zip(snapshot) {
                p.value = v;
            }
            (Some(epoch), Some(f1))
        }
        None => (None, None),
    };
    Ok(FitOutcome {
        log,
        best_epoch,
        best_dev_f1,
    })
}
