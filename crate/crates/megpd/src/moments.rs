//! Monte Carlo moments and covariances of the bivariate model, plus the
//! closed-form symmetric-Beta moments entering the decomposition formulas and
//! the Breiman tail constants.
//!
//! Marginal moments decompose as
//!
//! ```text
//! E(Y_j^q) = sum_{l=0}^{q} C(q,l) E{R^q (1-w)^l w^(q-l)} E(L_j^l) E(U_j^(q-l))
//! ```
//!
//! with `w = omega(F_R(R))`. The Beta factors are closed-form; the radial
//! expectations are one-dimensional Monte Carlo integrals over the uniform
//! seed `u0`. The covariance expands the same way through
//! `Cov(Y_j, Y_k) = E(Y_j Y_k) - E(Y_j) E(Y_k)` with
//! `E(Y_j) = E{R(1-w)} E(L_j) + E(R w) E(U_j)`. Both routes are exposed so
//! they can be checked against each other.

use crate::error::{Error, Result};
use crate::model::{simulate, weight_fn, MegpdParams};
use crate::scalar::Real;
use crate::stats;
use crate::streams::substream;
use crate::egpd::egpd_quantile;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate with its standard error and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_sims: usize,
    pub seed: u64,
    /// False when the moment-existence condition `xi < 1/q` (or `xi < 1/2`
    /// for covariances) fails; the estimate may then be meaningless.
    pub existence_condition: bool,
}

/// `E(V^l)` for `V ~ Beta(a, a)` and integer `l >= 0`:
/// the product of `(a + i) / (2a + i)` over `i = 0..l`.
pub fn beta_moment<T: Real>(a: T, l: u32) -> T {
    let two = T::from_f64(2.0);
    let mut acc = T::one();
    for i in 0..l {
        let i = T::from_f64(i as f64);
        acc = acc * (a + i) / (two * a + i);
    }
    acc
}

/// `E(V^p)` for `V ~ Beta(a, a)` and real `p`: `B(a+p, a) / B(a, a)` via
/// log-gamma when `a + p > 0`, `+inf` when the moment does not exist.
pub fn beta_power_moment<T: Real>(a: T, p: T) -> T {
    if a + p <= T::zero() {
        return T::infinity();
    }
    let two = T::from_f64(2.0);
    ((a + p).ln_gamma() + (two * a).ln_gamma() - (two * a + p).ln_gamma() - a.ln_gamma()).exp()
}

fn binomial(q: u32, l: u32) -> f64 {
    let mut acc = 1.0f64;
    for i in 0..l {
        acc = acc * (q - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Direct Monte Carlo estimate of the marginal moment `E(Y_j^q)`.
pub fn moment_mc(
    params: &MegpdParams<f64>,
    component: usize,
    q: u32,
    m: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    check_moment_inputs(params, component, q, m)?;
    let data = simulate(params, m, seed)?;
    let powers: Vec<f64> = data
        .rows()
        .iter()
        .map(|r| r[component].powi(q as i32))
        .collect();
    Ok(MomentEstimate {
        value: stats::mean(&powers),
        std_error: stats::std_error(&powers),
        n_sims: m,
        seed,
        existence_condition: params.radial.xi < 1.0 / q as f64,
    })
}

/// Decomposition-route estimate of `E(Y_j^q)`: closed-form Beta factors times
/// radial-weight expectations estimated by one-dimensional Monte Carlo over
/// the uniform seed.
pub fn moment_decomposed(
    params: &MegpdParams<f64>,
    component: usize,
    q: u32,
    m: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    check_moment_inputs(params, component, q, m)?;
    // Symmetric components share moments, so E(L_j^l) ignores j.
    let bl: Vec<f64> = (0..=q).map(|l| beta_moment(params.theta_lower, l)).collect();
    let bu: Vec<f64> = (0..=q).map(|l| beta_moment(params.theta_upper, l)).collect();
    let coeff: Vec<f64> = (0..=q)
        .map(|l| binomial(q, l) * bl[l as usize] * bu[(q - l) as usize])
        .collect();

    let mut rng = substream(seed, 0);
    let per_draw: Vec<f64> = (0..m)
        .map(|_| {
            let mut u0: f64 = rng.random();
            if u0 <= 0.0 {
                u0 = f64::MIN_POSITIVE;
            }
            let r = egpd_quantile(u0, &params.radial).expect("u0 in (0,1)");
            let w = weight_fn(u0, params.theta_omega).expect("u0 in [0,1]");
            let rq = r.powi(q as i32);
            let mut acc = 0.0;
            for l in 0..=q {
                acc += coeff[l as usize]
                    * rq
                    * (1.0 - w).powi(l as i32)
                    * w.powi((q - l) as i32);
            }
            acc
        })
        .collect();
    Ok(MomentEstimate {
        value: stats::mean(&per_draw),
        std_error: stats::std_error(&per_draw),
        n_sims: m,
        seed,
        existence_condition: params.radial.xi < 1.0 / q as f64,
    })
}

fn check_moment_inputs(
    params: &MegpdParams<f64>,
    component: usize,
    q: u32,
    m: usize,
) -> Result<()> {
    params.validate()?;
    if component >= 2 {
        return Err(Error::DimensionMismatch(format!(
            "component index must be 0 or 1, got {component}"
        )));
    }
    if q == 0 {
        return Err(Error::InvalidParameter("moment order q must be >= 1".into()));
    }
    if m < 10_000 {
        return Err(Error::InsufficientData(format!(
            "simulation count must be at least 10000, got {m}"
        )));
    }
    Ok(())
}

/// Symmetric 2x2 covariance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    /// Entries [[var1, cov], [cov, var2]].
    pub entries: [[MomentEstimate; 2]; 2],
}

impl CovarianceEstimate {
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [
            [self.entries[0][0].value, self.entries[0][1].value],
            [self.entries[1][0].value, self.entries[1][1].value],
        ]
    }
}

/// Direct Monte Carlo covariance matrix of the model.
pub fn covariance_mc(params: &MegpdParams<f64>, m: usize, seed: u64) -> Result<CovarianceEstimate> {
    params.validate()?;
    if m < 10_000 {
        return Err(Error::InsufficientData(format!(
            "simulation count must be at least 10000, got {m}"
        )));
    }
    let data = simulate(params, m, seed)?;
    covariance_of_rows(data.rows(), params.radial.xi, m, seed)
}

/// Sample covariance of explicit rows, with influence-function standard
/// errors: `SE^2 ~ Var[(Y_j - mean_j)(Y_k - mean_k)] / m`.
pub(crate) fn covariance_of_rows(
    rows: &[[f64; 2]],
    xi: f64,
    m: usize,
    seed: u64,
) -> Result<CovarianceEstimate> {
    let col0: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let col1: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let means = [stats::mean(&col0), stats::mean(&col1)];
    let existence = xi < 0.5;
    let mut entries = [[MomentEstimate {
        value: 0.0,
        std_error: 0.0,
        n_sims: m,
        seed,
        existence_condition: existence,
    }; 2]; 2];
    for j in 0..2 {
        for k in 0..2 {
            let products: Vec<f64> = rows
                .iter()
                .map(|r| (r[j] - means[j]) * (r[k] - means[k]))
                .collect();
            let n = products.len() as f64;
            entries[j][k].value = stats::mean(&products) * n / (n - 1.0);
            entries[j][k].std_error = stats::std_error(&products);
        }
    }
    Ok(CovarianceEstimate { entries })
}

/// Decomposition-route covariance: the eight-term expansion of
/// `Cov(Y_j, Y_k)` with closed-form Beta factors and radial-weight
/// expectations from one-dimensional Monte Carlo, batched for standard
/// errors.
pub fn covariance_decomposed(
    params: &MegpdParams<f64>,
    m: usize,
    seed: u64,
) -> Result<CovarianceEstimate> {
    params.validate()?;
    if m < 10_000 {
        return Err(Error::InsufficientData(format!(
            "simulation count must be at least 10000, got {m}"
        )));
    }
    let a_l = params.theta_lower;
    let a_u = params.theta_upper;
    // E(L_j) = 1/2; E(L_j^2) = beta_moment(a, 2); cross moment
    // E(L_1 L_2) = E(V (1-V)) = 1/2 - E(V^2).
    let el = 0.5f64;
    let eu = 0.5f64;
    let el2 = beta_moment(a_l, 2);
    let eu2 = beta_moment(a_u, 2);
    let el_cross = 0.5 - el2;
    let eu_cross = 0.5 - eu2;

    let n_batches = 32usize;
    let batch = m / n_batches;
    let mut per_batch = [[Vec::with_capacity(n_batches), Vec::with_capacity(n_batches)],
        [Vec::with_capacity(n_batches), Vec::with_capacity(n_batches)]];
    let mut rng = substream(seed, 0);
    for _ in 0..n_batches {
        // Radial-weight expectations over this batch.
        let mut e_r2_ll = 0.0; // E{R^2 (1-w)^2}
        let mut e_r2_lu = 0.0; // E{R^2 (1-w) w}
        let mut e_r2_uu = 0.0; // E{R^2 w^2}
        let mut e_r_l = 0.0; // E{R (1-w)}
        let mut e_r_u = 0.0; // E{R w}
        for _ in 0..batch {
            let mut u0: f64 = rng.random();
            if u0 <= 0.0 {
                u0 = f64::MIN_POSITIVE;
            }
            let r = egpd_quantile(u0, &params.radial).expect("u0 in (0,1)");
            let w = weight_fn(u0, params.theta_omega).expect("u0 in [0,1]");
            let omw = 1.0 - w;
            e_r2_ll += r * r * omw * omw;
            e_r2_lu += r * r * omw * w;
            e_r2_uu += r * r * w * w;
            e_r_l += r * omw;
            e_r_u += r * w;
        }
        let bn = batch as f64;
        e_r2_ll /= bn;
        e_r2_lu /= bn;
        e_r2_uu /= bn;
        e_r_l /= bn;
        e_r_u /= bn;

        for j in 0..2 {
            for k in 0..2 {
                let (ell, euu) = if j == k { (el2, eu2) } else { (el_cross, eu_cross) };
                let cov = e_r2_ll * ell
                    + e_r2_lu * el * eu
                    + e_r2_lu * el * eu
                    + e_r2_uu * euu
                    - e_r_l * e_r_l * el * el
                    - e_r_l * e_r_u * el * eu
                    - e_r_l * e_r_u * el * eu
                    - e_r_u * e_r_u * eu * eu;
                per_batch[j][k].push(cov);
            }
        }
    }

    let existence = params.radial.xi < 0.5;
    let mut entries = [[MomentEstimate {
        value: 0.0,
        std_error: 0.0,
        n_sims: n_batches * batch,
        seed,
        existence_condition: existence,
    }; 2]; 2];
    for j in 0..2 {
        for k in 0..2 {
            entries[j][k].value = stats::mean(&per_batch[j][k]);
            entries[j][k].std_error = stats::std_error(&per_batch[j][k]);
        }
    }
    Ok(CovarianceEstimate { entries })
}

/// Agreement check between two estimates: `|a - b| <= k * sqrt(se_a^2 + se_b^2)`.
pub fn estimates_agree(a: &MomentEstimate, b: &MomentEstimate, k: f64) -> bool {
    let combined = (a.std_error * a.std_error + b.std_error * b.std_error).sqrt();
    (a.value - b.value).abs() <= k * combined
}
