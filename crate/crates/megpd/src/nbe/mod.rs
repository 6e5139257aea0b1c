//! Amortized neural point estimation of the model parameters.
//!
//! A permutation-invariant DeepSets network maps a dataset of exchangeable
//! replicates to a six-parameter estimate: an inner MLP embeds each
//! (variance-stabilized) observation, the embeddings are mean-pooled, and an
//! outer MLP maps the pooled summary together with `ln n` to the estimate.
//! Outputs are squashed onto the prior ranges, training minimizes the L1
//! loss on range-standardized parameters over datasets simulated from the
//! prior, and gradients are derived by hand (no autodiff dependency).

mod io;
mod net;
mod train;

pub use io::{load_model, save_model};
pub use net::{loss_and_grad, NbeArchitecture};
pub use train::{
    median_predictor_risk, model_validation_risk, train_nbe, validation_set, EpochLog,
    TrainConfig, TrainingLog, ValCase,
};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::MegpdParams;
use crate::scalar::Real;
use crate::streams::substream;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Independent uniform prior ranges for the six parameters, plus the range
/// of sample sizes seen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kappa: (f64, f64),
    pub sigma: (f64, f64),
    pub xi: (f64, f64),
    pub theta_lower: (f64, f64),
    pub theta_upper: (f64, f64),
    pub theta_omega: (f64, f64),
    /// Inclusive range of dataset sizes (discrete uniform).
    pub n_range: (usize, usize),
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            kappa: (0.1, 10.0),
            sigma: (0.1, 3.0),
            xi: (0.0, 0.5),
            theta_lower: (0.1, 20.0),
            theta_upper: (0.1, 20.0),
            theta_omega: (0.0, 0.5),
            n_range: (1000, 4000),
        }
    }
}

impl PriorSpec {
    pub fn ranges(&self) -> [(f64, f64); 6] {
        [
            self.kappa,
            self.sigma,
            self.xi,
            self.theta_lower,
            self.theta_upper,
            self.theta_omega,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in self.ranges() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!(
                    "prior range ({lo}, {hi}) is empty or not finite"
                )));
            }
        }
        if self.n_range.0 == 0 || self.n_range.0 > self.n_range.1 {
            return Err(Error::InvalidParameter(format!(
                "sample-size range {:?} is empty",
                self.n_range
            )));
        }
        Ok(())
    }

    /// Map a parameter vector onto [0,1]^6 by its prior ranges.
    pub fn standardize(&self, params: &MegpdParams<f64>) -> [f64; 6] {
        let v = params.to_array();
        let mut out = [0.0; 6];
        for (i, (lo, hi)) in self.ranges().iter().enumerate() {
            out[i] = (v[i] - lo) / (hi - lo);
        }
        out
    }

    pub fn contains(&self, params: &MegpdParams<f64>) -> bool {
        self.standardize(params)
            .iter()
            .all(|&t| (0.0..=1.0).contains(&t))
    }
}

/// Variance-stabilizing transform applied elementwise before the network:
/// `sign(x) ln(1 + |x|) - 1`.
pub fn vst<T: Real>(x: T) -> T {
    x.signum() * x.abs().ln_1p() - T::one()
}

/// Draw `k` (parameter, sample-size) pairs from the prior. Shape draws that
/// land on the closed boundary of the open model domain are nudged inside
/// (`xi >= 1e-6`, `theta_omega` in the open interval).
pub fn prior_sample(prior: &PriorSpec, k: usize, seed: u64) -> Result<Vec<(MegpdParams<f64>, usize)>> {
    prior.validate()?;
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut rng = substream(seed, 0);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let draw = |rng: &mut rand_chacha::ChaCha12Rng, (lo, hi): (f64, f64)| -> f64 {
            lo + (hi - lo) * rng.random::<f64>()
        };
        let kappa = draw(&mut rng, prior.kappa).max(1e-6);
        let sigma = draw(&mut rng, prior.sigma).max(1e-6);
        let xi = draw(&mut rng, prior.xi).max(1e-6);
        let theta_lower = draw(&mut rng, prior.theta_lower).max(1e-6);
        let theta_upper = draw(&mut rng, prior.theta_upper).max(1e-6);
        let theta_omega = draw(&mut rng, prior.theta_omega).clamp(1e-6, 0.5 - 1e-6);
        let n = rng.random_range(prior.n_range.0..=prior.n_range.1);
        let params = MegpdParams::from_array([kappa, sigma, xi, theta_lower, theta_upper, theta_omega])?;
        out.push((params, n));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// L1 loss on range-standardized parameters.
    L1RangeStandardized,
}

/// A trained estimator: architecture, flat weight vector, the prior it was
/// trained under, and its training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbeModel<T> {
    pub arch: NbeArchitecture,
    pub weights: Vec<T>,
    pub prior: PriorSpec,
    pub training_log: TrainingLog,
    pub loss: LossKind,
}

impl<T: Real> NbeModel<T> {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.prior.validate()?;
        if self.weights.len() != self.arch.weight_count() {
            return Err(Error::DimensionMismatch(format!(
                "weight vector has {} entries, architecture needs {}",
                self.weights.len(),
                self.arch.weight_count()
            )));
        }
        Ok(())
    }
}

/// Amortized point estimate for one dataset.
pub fn deepsets_forward<T: Real>(model: &NbeModel<T>, data: &Dataset<T>) -> Result<MegpdParams<f64>> {
    model.validate()?;
    if data.n() == 0 {
        return Err(Error::EmptyData);
    }
    let est = net::forward_estimate(&model.arch, &model.weights, &model.prior, data);
    MegpdParams::from_array(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleRule {
    /// Use the member with the lowest validation risk (default).
    BestValidation,
    /// Per-parameter median across members.
    PerParameterMedian,
}

/// Aggregate estimate of an ensemble of estimators trained under one prior.
pub fn ensemble_estimate<T: Real>(
    models: &[NbeModel<T>],
    data: &Dataset<T>,
    rule: EnsembleRule,
) -> Result<MegpdParams<f64>> {
    if models.is_empty() {
        return Err(Error::InvalidParameter("ensemble has no members".into()));
    }
    let prior = &models[0].prior;
    if models.iter().any(|m| &m.prior != prior) {
        return Err(Error::PriorMismatch(
            "ensemble members were trained under different priors".into(),
        ));
    }
    match rule {
        EnsembleRule::BestValidation => {
            let best = models
                .iter()
                .min_by(|a, b| {
                    a.training_log
                        .best_val_risk
                        .partial_cmp(&b.training_log.best_val_risk)
                        .expect("finite validation risks")
                })
                .expect("nonempty ensemble");
            deepsets_forward(best, data)
        }
        EnsembleRule::PerParameterMedian => {
            let mut per_param: Vec<Vec<f64>> = (0..6).map(|_| Vec::with_capacity(models.len())).collect();
            for m in models {
                let est = deepsets_forward(m, data)?.to_array();
                for (acc, v) in per_param.iter_mut().zip(est) {
                    acc.push(v);
                }
            }
            let mut out = [0.0; 6];
            for (i, vals) in per_param.iter_mut().enumerate() {
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let k = vals.len();
                out[i] = if k % 2 == 1 {
                    vals[k / 2]
                } else {
                    0.5 * (vals[k / 2 - 1] + vals[k / 2])
                };
            }
            MegpdParams::from_array(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn vst_reference_points() {
        assert_eq!(vst(0.0f64), -1.0);
        let e = std::f64::consts::E;
        assert!((vst(e - 1.0)).abs() < 1e-15);
        assert!((vst(-(e - 1.0)) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn prior_sample_stays_in_ranges() {
        let prior = PriorSpec::default();
        let draws = prior_sample(&prior, 100_000, 7).unwrap();
        for (p, n) in &draws {
            assert!(prior.contains(p), "draw outside prior: {:?}", p);
            assert!((1000..=4000).contains(n));
        }
        let kappas: Vec<f64> = draws.iter().map(|(p, _)| p.radial.kappa).collect();
        let m = stats::mean(&kappas);
        let se = stats::std_error(&kappas);
        assert!((m - 5.05).abs() < 3.0 * se, "kappa mean {} se {}", m, se);
    }

    #[test]
    fn ensemble_rules() {
        use crate::nbe::net::NbeArchitecture;
        let arch = NbeArchitecture::uniform(8);
        let prior = PriorSpec {
            n_range: (30, 80),
            ..PriorSpec::default()
        };
        let mk = |seed: u64, risk: f64| -> NbeModel<f64> {
            let mut log = TrainingLog::empty();
            log.best_val_risk = risk;
            NbeModel {
                weights: crate::nbe::net::init_weights(&arch, seed),
                arch: arch.clone(),
                prior: prior.clone(),
                training_log: log,
                loss: LossKind::L1RangeStandardized,
            }
        };
        let p = MegpdParams::from_array([3.0, 1.0, 0.2, 4.0, 0.5, 0.25]).unwrap();
        let data = crate::model::simulate(&p, 60, 901).unwrap();

        // A single member is the identity under either rule.
        let single = mk(1, 0.5);
        let direct = deepsets_forward(&single, &data).unwrap().to_array();
        for rule in [EnsembleRule::BestValidation, EnsembleRule::PerParameterMedian] {
            let agg = ensemble_estimate(std::slice::from_ref(&single), &data, rule)
                .unwrap()
                .to_array();
            assert_eq!(agg.map(f64::to_bits), direct.map(f64::to_bits));
        }

        // Identical weights: the aggregate equals any member.
        let clones = vec![mk(2, 0.4), mk(2, 0.6), mk(2, 0.3)];
        let member = deepsets_forward(&clones[0], &data).unwrap().to_array();
        for rule in [EnsembleRule::BestValidation, EnsembleRule::PerParameterMedian] {
            let agg = ensemble_estimate(&clones, &data, rule).unwrap().to_array();
            assert_eq!(agg.map(f64::to_bits), member.map(f64::to_bits));
        }

        // Best-validation picks the member with the smallest recorded risk.
        let mixed = vec![mk(3, 0.9), mk(4, 0.2), mk(5, 0.7)];
        let agg = ensemble_estimate(&mixed, &data, EnsembleRule::BestValidation)
            .unwrap()
            .to_array();
        let best = deepsets_forward(&mixed[1], &data).unwrap().to_array();
        assert_eq!(agg.map(f64::to_bits), best.map(f64::to_bits));

        // Members trained under different priors are rejected.
        let mut other = mk(6, 0.1);
        other.prior.kappa = (0.5, 5.0);
        assert!(matches!(
            ensemble_estimate(&[mk(7, 0.2), other], &data, EnsembleRule::BestValidation),
            Err(Error::PriorMismatch(_))
        ));
    }

    #[test]
    fn ensemble_of_trained_members_does_not_trail_the_worst() {
        // Five small independently trained members: the aggregate's held-out
        // risk must not exceed the worst member's risk.
        let prior = PriorSpec {
            n_range: (40, 100),
            ..PriorSpec::default()
        };
        let arch = crate::nbe::net::NbeArchitecture::uniform(12);
        let models: Vec<NbeModel<f64>> = (0..5)
            .map(|m| {
                let cfg = crate::nbe::TrainConfig {
                    k: 200,
                    batch_size: 25,
                    max_epochs: 6,
                    patience: 10,
                    seed: crate::streams::derive_seed(950, m),
                    ..crate::nbe::TrainConfig::default()
                };
                crate::nbe::train_nbe(&prior, &arch, &cfg).unwrap()
            })
            .collect();
        let cases = crate::nbe::validation_set(&prior, 40, 999).unwrap();
        let risk_of = |estimate: &dyn Fn(&crate::dataset::Dataset<f64>) -> MegpdParams<f64>| -> f64 {
            let mut total = 0.0;
            for case in &cases {
                let data = crate::model::simulate(&case.params, case.n, case.data_seed).unwrap();
                let est = estimate(&data);
                let t = prior.standardize(&case.params);
                let e = prior.standardize(&est);
                total += t.iter().zip(&e).map(|(a, b)| (a - b).abs()).sum::<f64>();
            }
            total / cases.len() as f64
        };
        let member_risks: Vec<f64> = models
            .iter()
            .map(|m| risk_of(&|d| deepsets_forward(m, d).unwrap()))
            .collect();
        let worst = member_risks.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        for rule in [EnsembleRule::BestValidation, EnsembleRule::PerParameterMedian] {
            let agg_risk = risk_of(&|d| ensemble_estimate(&models, d, rule).unwrap());
            assert!(
                agg_risk <= worst + 1e-12,
                "{rule:?}: aggregate risk {agg_risk} vs worst member {worst}"
            );
        }
    }

    #[test]
    fn standardize_is_affine_onto_unit_interval() {
        let prior = PriorSpec::default();
        let p = MegpdParams::from_array([0.1, 3.0, 0.25, 10.05, 0.1, 0.25]).unwrap();
        let t = prior.standardize(&p);
        assert!((t[0] - 0.0).abs() < 1e-12);
        assert!((t[1] - 1.0).abs() < 1e-12);
        assert!((t[2] - 0.5).abs() < 1e-12);
        assert!((t[3] - 0.5).abs() < 1e-9);
        assert!((t[5] - 0.5).abs() < 1e-12);
    }
}
