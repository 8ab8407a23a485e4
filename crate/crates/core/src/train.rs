//! Mini-batch training with best-dev model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::eval::{argmax, evaluate};
use crate::instances::QAInstance;
use crate::model::{Checkpoint, Model, ModelConfig, ModelKind, CHECKPOINT_FORMAT};
use crate::optim::{radam_step, RAdamHyper, RAdamState};
use crate::sparsevd::SparseCurve;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Uses `long_run_epochs` instead of `max_epochs`.
    pub long_run: bool,
    pub long_run_epochs: usize,
    /// Stop after this many epochs without a dev improvement.
    pub early_stop_patience: Option<usize>,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            batch_size: 128,
            max_epochs: 30,
            long_run: false,
            long_run_epochs: 75,
            early_stop_patience: Some(5),
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self) -> usize {
        if self.long_run {
            self.long_run_epochs
        } else {
            self.max_epochs
        }
    }

    pub fn hyper(&self) -> RAdamHyper {
        RAdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.epochs() < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::InvalidConfig("optimizer betas must lie in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

/// Full run configuration as read from a `--config` JSON file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's training instances.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: f64,
}

pub fn metrics_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,train_accuracy,dev_accuracy\n");
    for e in log {
        s.push_str(&format!("{},{:.6},{:.6},{:.6}\n", e.epoch, e.train_loss, e.train_accuracy, e.dev_accuracy));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best dev epoch.
    pub model: Model,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
    pub log: Vec<EpochLog>,
    /// Parameters after the last epoch run.
    pub final_model: Model,
    /// Per-epoch sparse ratios; empty for non-variational models.
    pub sparse_curve: SparseCurve,
}

impl TrainOutcome {
    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            seed,
            epoch: self.best_epoch,
            dev_accuracy: self.best_dev_accuracy,
            model: self.model.clone(),
        }
    }
}

struct InstanceGrad {
    loss: f64,
    correct: bool,
    grads: Vec<Tensor>,
}

fn leaves(tape: &mut Tape, model: &Model) -> Vec<Var> {
    model.tensors().into_iter().map(|t| tape.leaf(t.clone())).collect()
}

fn instance_grad(model: &Model, inst: &QAInstance, rng: &mut ChaCha8Rng) -> Result<InstanceGrad> {
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, model);
    let scores = model.scores_on_tape(&mut tape, &vars, inst, rng)?;
    let correct = argmax(&tape.value(scores).data) == inst.label;
    let loss = tape.softmax_cross_entropy(scores, inst.label)?;
    tape.backward(loss)?;
    Ok(InstanceGrad {
        loss: tape.scalar_value(loss),
        correct,
        grads: vars.iter().map(|&v| tape.grad(v)).collect(),
    })
}

fn kl_grads(model: &Model) -> Result<Option<Vec<Tensor>>> {
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, model);
    match model.kl_on_tape(&mut tape, &vars)? {
        Some(kl) => {
            tape.backward(kl)?;
            Ok(Some(vars.iter().map(|&v| tape.grad(v)).collect()))
        }
        None => Ok(None),
    }
}

fn track(curve: &mut SparseCurve, epoch: usize, model: &Model) -> Result<()> {
    if let Model::VdMlp(m) = model {
        curve.track(epoch, &m.tracked_layers(), m.config.vd.threshold)?;
    }
    Ok(())
}

/// Trains `model` in place and returns the best-dev snapshot.
///
/// Loss per step is the batch-mean cross-entropy plus, for variational
/// models, `kl_weight · KL / |train|`.
pub fn train_model(config: &TrainConfig, mut model: Model, train: &[QAInstance], dev: &[QAInstance]) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::InvalidConfig("dev set is empty".into()));
    }
    for inst in train.iter().chain(dev) {
        model.check_instance(inst)?;
    }
    let names = model.param_names();
    let hyper = config.hyper();
    let mut state = RAdamState::new(model.tensors());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(2);
    let epochs = config.epochs();
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = (epochs * steps_per_epoch) as f64;
    let n_train = train.len() as f64;

    let mut curve = SparseCurve::new();
    track(&mut curve, 0, &model)?;
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;
    let mut stall = 0;
    let mut step: u64 = 0;

    for epoch in 1..=epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let results: Vec<InstanceGrad> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_5a_3b1e);
                    rng.set_stream(((epoch as u64) << 32) | i as u64);
                    instance_grad(&model, &train[i], &mut rng)
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> = model.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
            for r in &results {
                loss_sum += r.loss;
                correct += r.correct as usize;
                for (g, rg) in grads.iter_mut().zip(&r.grads) {
                    g.data.iter_mut().zip(&rg.data).for_each(|(a, b)| *a += scale * b);
                }
            }
            step += 1;
            if let (Some(kl), Some(vd)) = (kl_grads(&model)?, model.vd_config()) {
                let w = vd.kl_weight((step - 1) as f64 / total_steps) / n_train;
                for (g, kg) in grads.iter_mut().zip(&kl) {
                    g.data.iter_mut().zip(&kg.data).for_each(|(a, b)| *a += w * b);
                }
            }
            let mut params = model.tensors_mut();
            radam_step(&mut params, &grads, &names, &mut state, &hyper, step)?;
        }
        track(&mut curve, epoch, &model)?;
        let dev_accuracy = evaluate(&model, dev)?.accuracy;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / n_train,
            train_accuracy: correct as f64 / n_train,
            dev_accuracy,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| dev_accuracy > *acc) {
            best = Some((epoch, dev_accuracy, model.clone()));
            stall = 0;
        } else {
            stall += 1;
        }
        if config.early_stop_patience.is_some_and(|p| stall >= p) {
            break;
        }
    }
    let (best_epoch, best_dev_accuracy, best_model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        best_dev_accuracy,
        log,
        final_model: model,
        sparse_curve: curve,
    })
}

/// Initializes a `kind` model from `run.model` and trains it.
pub fn train(run: &RunConfig, kind: ModelKind, train: &[QAInstance], dev: &[QAInstance]) -> Result<TrainOutcome> {
    run.train.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(run.train.seed);
    init_rng.set_stream(1);
    let model = Model::init(kind, &run.model, train, &mut init_rng)?;
    train_model(&run.train, model, train, dev)
}
