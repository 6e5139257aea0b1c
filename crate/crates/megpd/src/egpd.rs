//! Univariate generalized Pareto (GPD) and extended generalized Pareto (eGPD)
//! distributions.
//!
//! The GPD in canonical form is `H_xi(y) = 1 - (1 + xi y)^(-1/xi)` (with the
//! exponential limit at `xi = 0`), supported on `{y > 0 : 1 + xi y > 0}`. The
//! eGPD raises the GPD to a power: `F(y) = H_xi(y / sigma)^kappa`, giving a
//! lower tail `F(y) ~ (y/sigma)^kappa` as `y -> 0` and, for `xi > 0`, a heavy
//! upper tail `1 - F(y) ~ kappa (xi y / sigma)^(-1/xi)` as `y -> inf`.

use crate::error::{Error, Result};
use crate::optim::{self, OptimOptions, OptimResult};
use crate::scalar::Real;
use crate::stats;
use serde::{Deserialize, Serialize};

/// Below this magnitude the shape is treated as exactly zero and the
/// exponential-limit branch is used.
pub const XI_EXP_LIMIT: f64 = 1e-8;

/// Parameters of the extended generalized Pareto distribution.
///
/// `kappa` controls the lower tail, `xi` the upper tail, and `sigma` is the
/// overall scale. `xi = 0` (exponential upper tail) is permitted here; the
/// multivariate construction additionally requires `xi > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgpdParams<T> {
    pub kappa: T,
    pub sigma: T,
    pub xi: T,
}

impl<T: Real> EgpdParams<T> {
    pub fn new(kappa: T, sigma: T, xi: T) -> Result<Self> {
        let p = EgpdParams { kappa, sigma, xi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be positive and finite, got {}",
                self.kappa
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !(self.xi.is_finite() && self.xi >= T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "xi must be nonnegative and finite, got {}",
                self.xi
            )));
        }
        Ok(())
    }

    pub fn to_f64(&self) -> EgpdParams<f64> {
        EgpdParams {
            kappa: self.kappa.as_f64(),
            sigma: self.sigma.as_f64(),
            xi: self.xi.as_f64(),
        }
    }
}

fn xi_is_zero<T: Real>(xi: T) -> bool {
    xi.abs() < T::from_f64(XI_EXP_LIMIT)
}

/// GPD distribution function in canonical form (unit scale).
///
/// For `xi < 0` the support is bounded above by `-1/xi`; evaluating beyond it
/// is a domain error.
pub fn gpd_cdf<T: Real>(y: T, xi: T) -> Result<T> {
    if !y.is_finite() || y < T::zero() {
        return Err(Error::Domain(format!(
            "gpd_cdf requires y >= 0, got {}",
            y
        )));
    }
    if xi < T::zero() && y > -(T::one() / xi) {
        return Err(Error::Domain(format!(
            "y = {} outside GPD support (upper endpoint {})",
            y,
            -(T::one() / xi)
        )));
    }
    if xi_is_zero(xi) {
        Ok(-(-y).exp_m1())
    } else {
        // 1 - (1 + xi y)^(-1/xi), evaluated via log1p/expm1.
        Ok(-(-(xi * y).ln_1p() / xi).exp_m1())
    }
}

/// GPD density in canonical form (unit scale).
pub fn gpd_pdf<T: Real>(y: T, xi: T) -> Result<T> {
    if !y.is_finite() || y < T::zero() {
        return Err(Error::Domain(format!(
            "gpd_pdf requires y >= 0, got {}",
            y
        )));
    }
    if xi < T::zero() && y > -(T::one() / xi) {
        return Err(Error::Domain(format!(
            "y = {} outside GPD support (upper endpoint {})",
            y,
            -(T::one() / xi)
        )));
    }
    if xi_is_zero(xi) {
        Ok((-y).exp())
    } else {
        Ok((-(T::one() / xi + T::one()) * (xi * y).ln_1p()).exp())
    }
}

/// eGPD distribution function `F(y) = H_xi(y/sigma)^kappa`.
pub fn egpd_cdf<T: Real>(y: T, p: &EgpdParams<T>) -> Result<T> {
    p.validate()?;
    if !y.is_finite() || y < T::zero() {
        return Err(Error::Domain(format!(
            "egpd_cdf requires y >= 0, got {}",
            y
        )));
    }
    let h = gpd_cdf(y / p.sigma, p.xi)?;
    Ok(h.powf(p.kappa))
}

/// eGPD survival function `1 - F(y)`, stable deep in the upper tail.
pub fn egpd_sf<T: Real>(y: T, p: &EgpdParams<T>) -> Result<T> {
    p.validate()?;
    if !y.is_finite() || y < T::zero() {
        return Err(Error::Domain(format!("egpd_sf requires y >= 0, got {}", y)));
    }
    let z = y / p.sigma;
    // s = 1 - H computed directly, then 1 - (1-s)^kappa via log1p/expm1.
    let s = if xi_is_zero(p.xi) {
        (-z).exp()
    } else {
        (-(p.xi * z).ln_1p() / p.xi).exp()
    };
    Ok(-(p.kappa * (-s).ln_1p()).exp_m1())
}

/// Natural log of the eGPD survival function; usable far beyond the range
/// where `egpd_sf` underflows.
pub fn egpd_log_sf<T: Real>(y: T, p: &EgpdParams<T>) -> Result<T> {
    p.validate()?;
    if !y.is_finite() || y < T::zero() {
        return Err(Error::Domain(format!(
            "egpd_log_sf requires y >= 0, got {}",
            y
        )));
    }
    let z = y / p.sigma;
    let ln_s = if xi_is_zero(p.xi) {
        -z
    } else {
        -(p.xi * z).ln_1p() / p.xi
    };
    let s = ln_s.exp();
    if p.kappa * s < T::from_f64(1e-8) {
        // 1 - (1-s)^kappa = kappa s (1 - (kappa-1) s / 2 + O(s^2))
        let corr = (-(p.kappa - T::one()) * s / T::from_f64(2.0)).ln_1p();
        Ok(p.kappa.ln() + ln_s + corr)
    } else {
        Ok((-(p.kappa * (-s).ln_1p()).exp_m1()).ln())
    }
}

/// eGPD density `kappa H^(kappa-1) h / sigma`.
///
/// At `y = 0` the limiting value is returned: `0` for `kappa > 1`,
/// `1/sigma` for `kappa = 1`, `+inf` for `kappa < 1`.
pub fn egpd_pdf<T: Real>(y: T, p: &EgpdParams<T>) -> Result<T> {
    p.validate()?;
    if !y.is_finite() || y < T::zero() {
        return Err(Error::Domain(format!(
            "egpd_pdf requires y >= 0, got {}",
            y
        )));
    }
    let z = y / p.sigma;
    let h_cdf = gpd_cdf(z, p.xi)?;
    let h_pdf = gpd_pdf(z, p.xi)?;
    if h_cdf == T::zero() {
        let one = T::one();
        return Ok(if p.kappa > one {
            T::zero()
        } else if p.kappa == one {
            one / p.sigma
        } else {
            T::infinity()
        });
    }
    Ok(p.kappa * h_cdf.powf(p.kappa - T::one()) * h_pdf / p.sigma)
}

/// Natural log of the eGPD density.
pub fn egpd_log_pdf<T: Real>(y: T, p: &EgpdParams<T>) -> Result<T> {
    p.validate()?;
    if !y.is_finite() || y <= T::zero() {
        return Err(Error::Domain(format!(
            "egpd_log_pdf requires y > 0, got {}",
            y
        )));
    }
    let z = y / p.sigma;
    let one = T::one();
    let (ln_h_cdf, ln_h_pdf) = if xi_is_zero(p.xi) {
        (((-z).exp_m1()).neg().ln(), -z)
    } else {
        let l1p = (p.xi * z).ln_1p();
        (((-l1p / p.xi).exp_m1()).neg().ln(), -(one / p.xi + one) * l1p)
    };
    Ok(p.kappa.ln() + (p.kappa - one) * ln_h_cdf + ln_h_pdf - p.sigma.ln())
}

/// eGPD quantile function.
///
/// Closed form: `(sigma/xi) ((1 - prob^(1/kappa))^(-xi) - 1)` for `xi > 0`
/// and `-sigma ln(1 - prob^(1/kappa))` for `xi = 0`.
pub fn egpd_quantile<T: Real>(prob: T, p: &EgpdParams<T>) -> Result<T> {
    p.validate()?;
    if !(prob > T::zero() && prob < T::one()) {
        return Err(Error::Domain(format!(
            "quantile probability must be in (0,1), got {}",
            prob
        )));
    }
    // ln t where t = 1 - prob^(1/kappa). Two branches keep full precision:
    // near prob = 1 the expm1 form avoids cancellation in t, and for small
    // prob^(1/kappa) the log1p form avoids forming t = 1 - tiny.
    let a = prob.ln() / p.kappa;
    let ln_t = if a < -T::from_f64(std::f64::consts::LN_2) {
        (-a.exp()).ln_1p()
    } else {
        (-a.exp_m1()).ln()
    };
    if xi_is_zero(p.xi) {
        Ok(-p.sigma * ln_t)
    } else {
        Ok(p.sigma / p.xi * (-p.xi * ln_t).exp_m1())
    }
}

/// Log-likelihood of positive observations under the eGPD.
pub fn egpd_loglik<T: Real>(data: &[T], p: &EgpdParams<T>) -> Result<T> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut acc = T::zero();
    for &y in data {
        acc += egpd_log_pdf(y, p)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitAlgorithm {
    /// Nelder-Mead simplex on the log-transformed parameters (default).
    Simplex,
    /// BFGS with analytic gradients on the log-transformed parameters.
    QuasiNewton,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions<T> {
    /// Minimum number of observations accepted.
    pub min_len: usize,
    pub algorithm: FitAlgorithm,
    pub optim: OptimOptions<T>,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        FitOptions {
            min_len: 30,
            algorithm: FitAlgorithm::Simplex,
            optim: OptimOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport<T> {
    pub iterations: usize,
    pub evals: usize,
    pub loglik: T,
    pub converged: bool,
    pub algorithm: FitAlgorithm,
}

/// Gradient of the per-observation log-density with respect to
/// `(ln kappa, ln sigma, ln xi)`.
fn log_pdf_grad_logparams<T: Real>(y: T, p: &EgpdParams<T>) -> [T; 3] {
    let one = T::one();
    let z = y / p.sigma;
    let (kappa, xi) = (p.kappa, p.xi);
    let u = xi * z;
    let l1p = u.ln_1p();
    let h = -((-l1p / xi).exp_m1()); // H(z)
    let hp = (-(one / xi + one) * l1p).exp(); // h(z)
    // d log f / d z, then chain through z = y/sigma.
    let dlogf_dz = (kappa - one) * hp / h - (one + xi) / (one + u);
    let d_lsigma = -z * dlogf_dz - one;
    let d_lkappa = one + kappa * h.ln();
    // dH/dxi and d ln h/dxi.
    let a = (-l1p / xi).exp(); // (1+u)^(-1/xi) = 1 - H
    let dh_dxi = -a * (l1p / (xi * xi) - z / (xi * (one + u)));
    let dlnhp_dxi = l1p / (xi * xi) - (one / xi + one) * z / (one + u);
    // The xi-derivative suffers cancellation for xi below ~1e-5; the simplex
    // path does not use it and the quasi-Newton option targets xi away from 0.
    let d_lxi = xi * ((kappa - one) * dh_dxi / h + dlnhp_dxi);
    [d_lkappa, d_lsigma, d_lxi]
}

/// Maximum-likelihood fit of the eGPD.
///
/// Optimizes over `(ln kappa, ln sigma, ln xi)` so positivity is free;
/// `xi = 0` is therefore not reachable. Non-convergence is reported via the
/// `converged` flag, not an error.
pub fn fit_egpd_mle<T: Real>(
    data: &[T],
    init: Option<EgpdParams<T>>,
) -> Result<(EgpdParams<T>, FitReport<T>)> {
    fit_egpd_mle_with(data, init, &FitOptions::default())
}

pub fn fit_egpd_mle_with<T: Real>(
    data: &[T],
    init: Option<EgpdParams<T>>,
    opts: &FitOptions<T>,
) -> Result<(EgpdParams<T>, FitReport<T>)> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if data.len() < opts.min_len {
        return Err(Error::InsufficientData(format!(
            "need at least {} observations for the eGPD fit, got {}",
            opts.min_len,
            data.len()
        )));
    }
    if data.iter().any(|&y| !(y.is_finite() && y > T::zero())) {
        return Err(Error::Domain(
            "eGPD fit requires strictly positive finite data".into(),
        ));
    }
    let first = data[0];
    if data.iter().all(|&y| y == first) {
        return Err(Error::DegenerateData(
            "all observations are identical".into(),
        ));
    }

    let init = match init {
        Some(p) => {
            p.validate()?;
            // xi = 0 cannot be represented on the log scale; nudge.
            let xi = p.xi.max(T::from_f64(1e-6));
            EgpdParams { xi, ..p }
        }
        None => EgpdParams {
            kappa: T::one(),
            sigma: stats::mean(data),
            xi: T::from_f64(0.1),
        },
    };
    let x0 = [init.kappa.ln(), init.sigma.ln(), init.xi.ln()];

    let from_log = |x: &[T]| EgpdParams {
        kappa: x[0].exp(),
        sigma: x[1].exp(),
        xi: x[2].exp(),
    };
    let neg_loglik = |x: &[T]| -> T {
        let p = from_log(x);
        if !(p.kappa.is_finite() && p.sigma.is_finite() && p.xi.is_finite()) {
            return T::infinity();
        }
        match egpd_loglik(data, &p) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => T::infinity(),
        }
    };

    let result: OptimResult<T> = match opts.algorithm {
        FitAlgorithm::Simplex => optim::nelder_mead(neg_loglik, &x0, &opts.optim),
        FitAlgorithm::QuasiNewton => optim::bfgs(
            |x| {
                let p = from_log(x);
                let mut ll = T::zero();
                let mut grad = [T::zero(); 3];
                for &y in data {
                    match egpd_log_pdf(y, &p) {
                        Ok(v) if v.is_finite() => ll += v,
                        _ => return (T::infinity(), vec![T::zero(); 3]),
                    }
                    let g = log_pdf_grad_logparams(y, &p);
                    for (acc, gi) in grad.iter_mut().zip(g) {
                        *acc += gi;
                    }
                }
                (-ll, grad.iter().map(|&g| -g).collect())
            },
            &x0,
            &opts.optim,
        ),
    };

    let params = from_log(&result.x);
    params.validate()?;
    let report = FitReport {
        iterations: result.iterations,
        evals: result.evals,
        loglik: -result.fx,
        converged: result.converged,
        algorithm: opts.algorithm,
    };
    Ok((params, report))
}
