//! Adam, learning-rate schedules, the training loop and accuracy evaluation.

mod adam;

use std::io;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CheckpointError, Tape, TensorError};
use crate::models::{stack_inputs, InputShape, Model, ModelSpec, SpecError};
use crate::par::Execution;
use crate::rng;
use crate::signal::NetworkInput;

pub use adam::{adam_step, AdamHyper, AdamState};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{0} set is empty")]
    EmptyDataset(&'static str),
    #[error("{set} sample {index}: {msg}")]
    Input {
        set: &'static str,
        index: usize,
        msg: String,
    },
    #[error("non-finite gradient for {param} at step {step}")]
    NonFiniteGradient { param: String, step: u64 },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Learning-rate schedule, stepped at epoch boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheduler {
    #[default]
    None,
    /// `lr0 * gamma^epoch`.
    Exponential { gamma: f64 },
    /// `lr0 * gamma^floor(epoch / step_size)`.
    Step { step_size: usize, gamma: f64 },
}

impl Scheduler {
    /// Short stable name used in reports and seed derivation.
    pub fn key(&self) -> &'static str {
        match self {
            Scheduler::None => "none",
            Scheduler::Exponential { .. } => "exponential",
            Scheduler::Step { .. } => "step",
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        match *self {
            Scheduler::None => {}
            Scheduler::Exponential { gamma } => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    v.push(format!("scheduler gamma {gamma} outside (0, 1]"));
                }
            }
            Scheduler::Step { step_size, gamma } => {
                if !(gamma > 0.0 && gamma <= 1.0) {
                    v.push(format!("scheduler gamma {gamma} outside (0, 1]"));
                }
                if step_size == 0 {
                    v.push("scheduler step_size must be at least 1".into());
                }
            }
        }
        v
    }
}

/// Learning rate in effect during `epoch` (zero-based).
pub fn scheduler_lr(scheduler: &Scheduler, lr0: f64, epoch: usize) -> f64 {
    match *scheduler {
        Scheduler::None => lr0,
        Scheduler::Exponential { gamma } => lr0 * gamma.powi(epoch as i32),
        Scheduler::Step { step_size, gamma } => lr0 * gamma.powi((epoch / step_size) as i32),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub scheduler: Scheduler,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 60,
            scheduler: Scheduler::None,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// Lists every violated constraint.
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut v = Vec::new();
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(format!("learning_rate {} must be positive", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                v.push(format!("{name} {b} outside (0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            v.push(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be positive".into());
        }
        if self.epochs == 0 {
            v.push("epochs must be positive".into());
        }
        v.extend(self.scheduler.violations());
        if v.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Config(v))
        }
    }

    fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes `epoch,lr,train_loss,val_acc` rows with a header.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_set(
    set: &[NetworkInput],
    name: &'static str,
    shape: InputShape,
    classes: usize,
) -> Result<(), TrainError> {
    let first = set.first().ok_or(TrainError::EmptyDataset(name))?;
    for (index, x) in set.iter().enumerate() {
        let bad = |msg: String| TrainError::Input {
            set: name,
            index,
            msg,
        };
        if x.channels != shape.channels || x.length != shape.length {
            return Err(bad(format!(
                "shape {}x{} but model expects {}x{}",
                x.channels, x.length, shape.channels, shape.length
            )));
        }
        if x.data.len() != x.channels * x.length {
            return Err(bad(format!("{} values for {}x{}", x.data.len(), x.channels, x.length)));
        }
        if x.modality != first.modality {
            return Err(bad(format!(
                "modality {} mixed with {}",
                x.modality.key(),
                first.modality.key()
            )));
        }
        if x.label as usize >= classes {
            return Err(bad(format!("label {} but model has {classes} classes", x.label)));
        }
    }
    Ok(())
}

/// Builds a model from `spec` with `cfg.seed` and trains it.
pub fn train_spec(
    spec: &ModelSpec,
    input: InputShape,
    train_set: &[NetworkInput],
    val_set: &[NetworkInput],
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory), TrainError> {
    let model = Model::build(spec, input, cfg.seed)?;
    train(model, train_set, val_set, cfg)
}

/// Trains `model` for `cfg.epochs` epochs and returns the final-epoch model.
///
/// Shuffling and dropout masks draw from streams derived from `cfg.seed`, so
/// the result is a pure function of (model, data, config).
pub fn train(
    mut model: Model,
    train_set: &[NetworkInput],
    val_set: &[NetworkInput],
    cfg: &TrainConfig,
) -> Result<(Model, TrainHistory), TrainError> {
    cfg.validate()?;
    let classes = model.spec().classes();
    check_set(train_set, "train", model.input(), classes)?;
    check_set(val_set, "validation", model.input(), classes)?;
    if train_set[0].modality != val_set[0].modality {
        return Err(TrainError::Input {
            set: "validation",
            index: 0,
            msg: "modality differs from the training set".into(),
        });
    }

    let mut shuffle_rng = rng::derive(cfg.seed, &["shuffle"]);
    let mut dropout_rng = rng::derive(cfg.seed, &["dropout"]);
    let mut state = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let lr = scheduler_lr(&cfg.scheduler, cfg.learning_rate, epoch);
        if cfg.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&NetworkInput> = idx.iter().map(|&i| &train_set[i]).collect();
            let labels: Vec<usize> = items.iter().map(|x| x.label as usize).collect();
            let mut tape = Tape::new();
            let params = model.bind(&mut tape);
            let x = tape.constant(stack_inputs(&items, model.input())?);
            let logits = model.forward(&mut tape, &params, x, Some(&mut dropout_rng))?;
            let loss_var = tape.cross_entropy(logits, &labels)?;
            let loss = tape.value(loss_var).item();
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch });
            }
            loss_sum += loss * idx.len() as f64;
            let mut grads = tape.backward(loss_var)?;
            let grads = params
                .iter()
                .map(|&p| grads.take(p).expect("bound parameters receive gradients"))
                .collect::<Vec<_>>();
            adam_step(model.params_mut(), &grads, &mut state, cfg.hyper(lr))?;
        }
        history.records.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            val_acc: evaluate(&model, val_set, Execution::Sequential)?,
        });
    }
    Ok((model, history))
}

/// Evaluation batch size; affects only memory, not results.
const EVAL_CHUNK: usize = 64;

/// Argmax with ties going to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode class predictions, chunks scored under `exec`.
pub fn predict(
    model: &Model,
    set: &[NetworkInput],
    exec: Execution,
) -> Result<Vec<usize>, TensorError> {
    let chunks: Vec<&[NetworkInput]> = set.chunks(EVAL_CHUNK).collect();
    let classes = model.spec().classes();
    let per_chunk = exec.map(&chunks, |chunk| -> Result<Vec<usize>, TensorError> {
        let refs: Vec<&NetworkInput> = chunk.iter().collect();
        let logits = model.logits(&refs)?;
        Ok(logits.data().chunks(classes).map(argmax).collect())
    });
    let mut out = Vec::with_capacity(set.len());
    for preds in per_chunk {
        out.extend(preds?);
    }
    Ok(out)
}

/// Classification accuracy in `[0, 1]`; an empty set scores 0.
pub fn evaluate(model: &Model, set: &[NetworkInput], exec: Execution) -> Result<f64, TensorError> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let preds = predict(model, set, exec)?;
    let correct = preds
        .iter()
        .zip(set)
        .filter(|(p, x)| **p == x.label as usize)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

#[cfg(test)]
mod tests;
