//! Mini-batch training of the DeepSets estimator on simulated data.
//!
//! The training set is a fixed collection of K (parameter, sample-size)
//! pairs drawn from the prior; the dataset of pair k is re-simulated on the
//! fly from a seed derived from (master seed, k), so an epoch never holds
//! more than one batch of data in memory while every epoch sees identical
//! data. Per-dataset gradients within a batch are computed in parallel and
//! reduced in index order, so training is deterministic for any thread
//! count. Optimization is Adam; training stops once the validation risk has
//! not improved for `patience` consecutive epochs, returning the
//! best-validation checkpoint.

use super::net::{init_weights, loss_and_grad, NbeArchitecture};
use super::{deepsets_forward, prior_sample, LossKind, NbeModel, PriorSpec};
use crate::error::{Error, Result};
use crate::model::{simulate, MegpdParams};
use crate::scalar::Real;
use crate::streams::{derive_seed, substream};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const TAG_TRAIN_PRIOR: u64 = 0x10;
const TAG_VAL_PRIOR: u64 = 0x11;
const TAG_INIT: u64 = 0x12;
const TAG_SHUFFLE: u64 = 0x13;
const TAG_TRAIN_DATA: u64 = 0x2000_0000;
const TAG_VAL_DATA: u64 = 0x4000_0000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of training (parameter, dataset) pairs. A tenth as many
    /// validation pairs are generated alongside.
    pub k: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stop after this many consecutive epochs without validation
    /// improvement.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 100_000,
            batch_size: 64,
            learning_rate: 1e-3,
            patience: 10,
            max_epochs: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_risk: f64,
    pub val_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Infinite for an untrained model (JSON stores that as null).
    #[serde(with = "nullable_f64")]
    pub best_val_risk: f64,
    pub stop_reason: String,
}

/// JSON has no Infinity; map non-finite values to null and back.
mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl TrainingLog {
    pub fn empty() -> Self {
        TrainingLog {
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_risk: f64::INFINITY,
            stop_reason: "untrained".into(),
        }
    }
}

/// One held-out case: parameters, dataset size, and the seed that
/// regenerates its data.
#[derive(Debug, Clone, Copy)]
pub struct ValCase {
    pub params: MegpdParams<f64>,
    pub n: usize,
    pub data_seed: u64,
}

/// Deterministic validation set for a given prior and master seed.
pub fn validation_set(prior: &PriorSpec, k_val: usize, seed: u64) -> Result<Vec<ValCase>> {
    let pairs = prior_sample(prior, k_val, derive_seed(seed, TAG_VAL_PRIOR))?;
    Ok(pairs
        .into_iter()
        .enumerate()
        .map(|(i, (params, n))| ValCase {
            params,
            n,
            data_seed: derive_seed(seed, TAG_VAL_DATA + i as u64),
        })
        .collect())
}

/// Mean standardized L1 risk of a model over held-out cases.
pub fn model_validation_risk<T: Real + ndarray::LinalgScalar>(
    model: &NbeModel<T>,
    cases: &[ValCase],
) -> Result<f64> {
    let losses: Vec<f64> = cases
        .par_iter()
        .map(|case| -> Result<f64> {
            let data = simulate(&case.params, case.n, case.data_seed)?.cast::<T>();
            let est = deepsets_forward(model, &data)?;
            let t = model.prior.standardize(&case.params);
            let e = model.prior.standardize(&est);
            Ok(t.iter().zip(&e).map(|(a, b)| (a - b).abs()).sum())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Risk of the constant predictor that always answers the prior median
/// (the midpoint of every range), on the same standardized scale.
pub fn median_predictor_risk(prior: &PriorSpec, cases: &[ValCase]) -> f64 {
    let total: f64 = cases
        .iter()
        .map(|case| {
            prior
                .standardize(&case.params)
                .iter()
                .map(|t| (t - 0.5).abs())
                .sum::<f64>()
        })
        .sum();
    total / cases.len() as f64
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    lr: f64,
}

impl<T: Real> Adam<T> {
    fn new(len: usize, lr: f64) -> Self {
        Adam {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, w: &mut [T], grad: &[T]) {
        let b1 = T::from_f64(0.9);
        let b2 = T::from_f64(0.999);
        let eps = T::from_f64(1e-8);
        self.t += 1;
        let corr1 = T::from_f64(1.0 - 0.9f64.powi(self.t));
        let corr2 = T::from_f64(1.0 - 0.999f64.powi(self.t));
        let lr = T::from_f64(self.lr);
        for i in 0..w.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mhat = self.m[i] / corr1;
            let vhat = self.v[i] / corr2;
            w[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Train one estimator. See the module docs for the data pipeline and
/// determinism guarantees.
pub fn train_nbe<T: Real + ndarray::LinalgScalar>(
    prior: &PriorSpec,
    arch: &NbeArchitecture,
    cfg: &TrainConfig,
) -> Result<NbeModel<T>> {
    prior.validate()?;
    arch.validate()?;
    if cfg.k < 100 {
        return Err(Error::InsufficientData(format!(
            "training set size must be at least 100, got {}",
            cfg.k
        )));
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.patience == 0 {
        return Err(Error::InvalidParameter(
            "batch size, max epochs and patience must be positive".into(),
        ));
    }

    let train_pairs = prior_sample(prior, cfg.k, derive_seed(cfg.seed, TAG_TRAIN_PRIOR))?;
    let train_truths: Vec<[f64; 6]> = train_pairs
        .iter()
        .map(|(p, _)| prior.standardize(p))
        .collect();
    let val_cases = validation_set(prior, (cfg.k / 10).max(10), cfg.seed)?;

    let mut weights: Vec<T> = init_weights(arch, derive_seed(cfg.seed, TAG_INIT));
    let mut adam = Adam::new(weights.len(), cfg.learning_rate);

    let mut log = TrainingLog::empty();
    let mut best_weights = weights.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut epochs_since_improvement = 0usize;
    let mut stop_reason = String::from("max-epochs");

    let mut model_probe = NbeModel {
        arch: arch.clone(),
        weights: weights.clone(),
        prior: prior.clone(),
        training_log: TrainingLog::empty(),
        loss: LossKind::L1RangeStandardized,
    };

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..cfg.k).collect();
        let mut shuffle_rng = substream(derive_seed(cfg.seed, TAG_SHUFFLE), epoch as u64);
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            // Simulate and differentiate each dataset in parallel; reduce in
            // index order for determinism.
            let results: Vec<(f64, Vec<T>)> = batch
                .par_iter()
                .map(|&idx| {
                    let (params, n) = &train_pairs[idx];
                    let data = simulate(params, *n, derive_seed(cfg.seed, TAG_TRAIN_DATA + idx as u64))
                        .expect("training simulation")
                        .cast::<T>();
                    let (loss, grad) =
                        loss_and_grad(arch, &weights, &data, &train_truths[idx]);
                    (loss.as_f64(), grad)
                })
                .collect();

            let scale = T::from_f64(1.0 / batch.len() as f64);
            let mut grad_acc = vec![T::zero(); weights.len()];
            for (loss, grad) in &results {
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged(format!(
                        "non-finite training loss at epoch {epoch}"
                    )));
                }
                epoch_loss_sum += loss;
                for (acc, g) in grad_acc.iter_mut().zip(grad) {
                    *acc += *g * scale;
                }
            }
            adam.step(&mut weights, &grad_acc);
        }

        let train_risk = epoch_loss_sum / cfg.k as f64;
        model_probe.weights.clone_from(&weights);
        let val_risk = model_validation_risk(&model_probe, &val_cases)?;
        if !val_risk.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "non-finite validation risk at epoch {epoch}"
            )));
        }
        log.epochs.push(EpochLog {
            epoch,
            train_risk,
            val_risk,
        });

        if val_risk < best_val {
            best_val = val_risk;
            best_epoch = epoch;
            best_weights.clone_from(&weights);
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= cfg.patience {
                stop_reason = format!("early-stopping after epoch {epoch}");
                break;
            }
        }
    }

    log.best_epoch = best_epoch;
    log.best_val_risk = best_val;
    log.stop_reason = stop_reason;

    Ok(NbeModel {
        arch: arch.clone(),
        weights: best_weights,
        prior: prior.clone(),
        training_log: log,
        loss: LossKind::L1RangeStandardized,
    })
}
