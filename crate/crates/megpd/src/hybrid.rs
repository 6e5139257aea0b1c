//! Staged likelihood-moment estimation of the full six-parameter model.
//!
//! The latent pieces are indirectly observed: the L1 norm of every row equals
//! the radius, so the radial parameters are fit by maximum likelihood on row
//! sums; angles with very small (large) radii are approximate draws from the
//! lower (upper) angular law, so the Beta shapes are fit by maximum
//! likelihood on threshold-selected angles; and the weight parameter, which
//! only shifts the bulk, is fit by matching model covariances (approximated
//! by simulation with common random numbers) to sample covariances.

use crate::dataset::Dataset;
use crate::egpd::{fit_egpd_mle, EgpdParams, FitReport};
use crate::error::{Error, Result};
use crate::model::{weight_fn, MegpdParams};
use crate::moments::covariance_of_rows;
use crate::optim::golden_section;
use crate::special::ln_beta;
use crate::stats;
use crate::streams::substream;
use crate::Tail;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

/// Angular Beta shapes above this cap are numerically degenerate at double
/// precision; the optimizer reports a boundary hit instead of going further.
pub const THETA_CAP: f64 = 200.0;
const THETA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AngularReport {
    pub tail: Tail,
    pub theta: f64,
    pub loglik: f64,
    pub n_used: usize,
    /// Angles exactly 0 or 1, excluded from the Beta likelihood.
    pub n_boundary_excluded: usize,
    pub boundary_hit: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaReport {
    pub theta_omega: f64,
    pub objective: f64,
    /// Raised when the grid objective range is within Monte Carlo noise;
    /// the weight parameter is then effectively unidentified.
    pub flat_objective: bool,
    /// (theta_omega, objective) pairs over the bracketing grid.
    pub grid: Vec<(f64, f64)>,
    pub m: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomCriterion {
    /// Match all covariance entries (default).
    Covariance,
    /// Match first and second marginal moments.
    Moments,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Counts {
    pub n_total: usize,
    pub n_lower: usize,
    pub n_upper: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Reports {
    pub radial: FitReport<f64>,
    pub lower: AngularReport,
    pub upper: AngularReport,
    pub omega: OmegaReport,
}

/// Result of the staged fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridFit {
    pub params: MegpdParams<f64>,
    /// Radius thresholds (lower, upper) delimiting the tail index sets.
    pub thresholds: (f64, f64),
    pub counts: Counts,
    pub mom_objective: f64,
    pub reports: Reports,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridOptions {
    /// Radius quantile below which angles inform the lower tail.
    pub q_lower: f64,
    /// Radius quantile above which angles inform the upper tail.
    pub q_upper: f64,
    /// Simulation count for the method-of-moments stage.
    pub m: usize,
    pub seed: u64,
    pub criterion: MomCriterion,
}

impl Default for HybridOptions {
    fn default() -> Self {
        HybridOptions {
            q_lower: 0.10,
            q_upper: 0.95,
            m: 100_000,
            seed: 0,
            criterion: MomCriterion::Covariance,
        }
    }
}

/// Maximum-likelihood fit of the radial eGPD on the row sums.
pub fn fit_radial(data: &Dataset<f64>) -> Result<(EgpdParams<f64>, FitReport<f64>)> {
    fit_egpd_mle(&data.radii(), None)
}

/// Beta(theta, theta) log-likelihood of angles.
fn beta_loglik(theta: f64, sum_log: f64, n: usize) -> f64 {
    (theta - 1.0) * sum_log - n as f64 * ln_beta(theta, theta)
}

/// Maximum-likelihood fit of one angular Beta shape from the angles whose
/// radii fall beyond the `quantile_level` empirical radius quantile.
pub fn fit_angular(
    data: &Dataset<f64>,
    tail: Tail,
    quantile_level: f64,
) -> Result<(f64, AngularReport)> {
    if !(0.0..1.0).contains(&quantile_level) || quantile_level <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "quantile level must be in (0,1), got {quantile_level}"
        )));
    }
    let radii = data.radii();
    let threshold = stats::quantile(&radii, quantile_level);
    let mut angles = Vec::new();
    let mut n_boundary = 0usize;
    for row in data.rows() {
        let r = row[0] + row[1];
        let selected = match tail {
            Tail::Lower => r < threshold,
            Tail::Upper => r > threshold,
        };
        if !selected {
            continue;
        }
        let v = row[0] / r;
        if v <= 0.0 || v >= 1.0 || !v.is_finite() {
            n_boundary += 1;
        } else {
            angles.push(v);
        }
    }
    if angles.len() < 30 {
        return Err(Error::InsufficientData(format!(
            "only {} usable tail angles after thresholding at level {quantile_level} \
             ({n_boundary} on the simplex boundary); need at least 30",
            angles.len()
        )));
    }

    let sum_log: f64 = angles.iter().map(|&v| v.ln() + (1.0 - v).ln()).sum();
    let n = angles.len();
    // The Beta(theta, theta) likelihood is an exponential family in theta,
    // hence log-concave; golden section on ln(theta) finds the maximum.
    let (ln_theta, neg_ll) = golden_section(
        |lt: f64| -beta_loglik(lt.exp(), sum_log, n),
        THETA_FLOOR.ln(),
        THETA_CAP.ln(),
        1e-10,
        200,
    );
    let theta = ln_theta.exp();
    let boundary_hit = theta >= 0.995 * THETA_CAP || theta <= 1.005 * THETA_FLOOR;
    let report = AngularReport {
        tail,
        theta,
        loglik: -neg_ll,
        n_used: n,
        n_boundary_excluded: n_boundary,
        boundary_hit,
    };
    Ok((theta, report))
}

/// Latent base used for common-random-numbers evaluation of the
/// method-of-moments objective: everything except the weight is frozen.
struct MomBase {
    u0: Vec<f64>,
    r: Vec<f64>,
    v_lower: Vec<f64>,
    v_upper: Vec<f64>,
}

impl MomBase {
    fn generate(radial: &EgpdParams<f64>, theta_l: f64, theta_u: f64, m: usize, seed: u64) -> Result<Self> {
        let mk = |a: f64| {
            Gamma::new(a, 1.0).map_err(|e| Error::InvalidParameter(format!("Gamma({a}): {e}")))
        };
        let gl = mk(theta_l)?;
        let gu = mk(theta_u)?;
        let mut rng = substream(seed, 0);
        let mut base = MomBase {
            u0: Vec::with_capacity(m),
            r: Vec::with_capacity(m),
            v_lower: Vec::with_capacity(m),
            v_upper: Vec::with_capacity(m),
        };
        for _ in 0..m {
            let u0: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            base.u0.push(u0);
            base.r.push(crate::egpd::egpd_quantile(u0, radial)?);
            let (a, b) = (gl.sample(&mut rng), gl.sample(&mut rng));
            base.v_lower.push(a / (a + b));
            let (a, b) = (gu.sample(&mut rng), gu.sample(&mut rng));
            base.v_upper.push(a / (a + b));
        }
        Ok(base)
    }

    fn rows(&self, theta_omega: f64, out: &mut Vec<[f64; 2]>) {
        out.clear();
        for i in 0..self.u0.len() {
            let w = weight_fn(self.u0[i], theta_omega).expect("u0 in [0,1]");
            let omw = 1.0 - w;
            let (vl, vu, r) = (self.v_lower[i], self.v_upper[i], self.r[i]);
            out.push([
                r * (omw * vl + w * vu),
                r * (omw * (1.0 - vl) + w * (1.0 - vu)),
            ]);
        }
    }
}

fn mom_objective(
    rows: &[[f64; 2]],
    criterion: MomCriterion,
    sample_cov: &[[f64; 2]; 2],
    sample_moments: &[[f64; 2]; 2],
) -> f64 {
    match criterion {
        MomCriterion::Covariance => {
            let model = covariance_of_rows(rows, 0.1, rows.len(), 0)
                .expect("covariance of simulated rows")
                .matrix();
            let mut obj = 0.0;
            for j in 0..2 {
                for k in 0..2 {
                    let d = model[j][k] - sample_cov[j][k];
                    obj += d * d;
                }
            }
            obj
        }
        MomCriterion::Moments => {
            let mut obj = 0.0;
            let inv = 1.0 / rows.len() as f64;
            for (qi, q) in [1i32, 2].iter().enumerate() {
                for j in 0..2 {
                    let model: f64 = rows.iter().map(|r| r[j].powi(*q)).sum::<f64>() * inv;
                    let d = model - sample_moments[qi][j];
                    obj += d * d;
                }
            }
            obj
        }
    }
}

/// Simulated method-of-moments estimate of the weight parameter with the
/// other parameters fixed.
///
/// A 21-point grid over (0, 1/2) brackets the minimizer, refined by golden
/// section; every evaluation reuses the same latent draws so the objective is
/// smooth in `theta_omega`.
pub fn fit_omega_mom(
    data: &Dataset<f64>,
    fixed: (&EgpdParams<f64>, f64, f64),
    m: usize,
    seed: u64,
) -> Result<(f64, OmegaReport)> {
    fit_omega_mom_with(data, fixed, m, seed, MomCriterion::Covariance)
}

pub fn fit_omega_mom_with(
    data: &Dataset<f64>,
    fixed: (&EgpdParams<f64>, f64, f64),
    m: usize,
    seed: u64,
    criterion: MomCriterion,
) -> Result<(f64, OmegaReport)> {
    let (radial, theta_l, theta_u) = fixed;
    radial.validate()?;
    if !(theta_l > 0.0 && theta_u > 0.0) {
        return Err(Error::InvalidParameter(
            "angular shapes must be positive".into(),
        ));
    }
    if m < 10_000 {
        return Err(Error::InsufficientData(format!(
            "method-of-moments simulation count must be at least 10000, got {m}"
        )));
    }

    let sample_cov = {
        let est = covariance_of_rows(data.rows(), radial.xi, data.n(), seed)?;
        est.matrix()
    };
    let inv_n = 1.0 / data.n() as f64;
    let mut sample_moments = [[0.0f64; 2]; 2];
    for (qi, q) in [1i32, 2].iter().enumerate() {
        for j in 0..2 {
            sample_moments[qi][j] = data.rows().iter().map(|r| r[j].powi(*q)).sum::<f64>() * inv_n;
        }
    }

    let base = MomBase::generate(radial, theta_l, theta_u, m, seed)?;
    let mut rows_buf: Vec<[f64; 2]> = Vec::with_capacity(m);
    let mut objective = |tw: f64| -> f64 {
        base.rows(tw, &mut rows_buf);
        mom_objective(&rows_buf, criterion, &sample_cov, &sample_moments)
    };

    // Bracketing grid of 21 interior points.
    let grid_points = 21usize;
    let mut grid = Vec::with_capacity(grid_points);
    for g in 1..=grid_points {
        let tw = 0.5 * g as f64 / (grid_points + 1) as f64;
        grid.push((tw, objective(tw)));
    }
    let (best_idx, _) = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.partial_cmp(&b.1 .1).unwrap())
        .map(|(i, g)| (i, g.1))
        .unwrap();
    let lo = if best_idx == 0 { 1e-4 } else { grid[best_idx - 1].0 };
    let hi = if best_idx == grid_points - 1 {
        0.5 - 1e-4
    } else {
        grid[best_idx + 1].0
    };
    let (theta_omega, obj_min) = golden_section(&mut objective, lo, hi, 1e-5, 200);

    // Monte Carlo noise scale of the objective: its standard deviation over
    // re-seeded full-size evaluations at the grid minimizer. If the whole
    // grid moves less than that, the criterion carries no information about
    // theta_omega.
    let n_noise = 10usize;
    let mut reseeded_objs = Vec::with_capacity(n_noise);
    let tw_at_min = grid[best_idx].0;
    for k in 0..n_noise {
        let alt = MomBase::generate(
            radial,
            theta_l,
            theta_u,
            m,
            crate::streams::derive_seed(seed, 1000 + k as u64),
        )?;
        alt.rows(tw_at_min, &mut rows_buf);
        reseeded_objs.push(mom_objective(&rows_buf, criterion, &sample_cov, &sample_moments));
    }
    let noise_sd = stats::sample_sd(&reseeded_objs);
    let grid_range = grid
        .iter()
        .map(|g| g.1)
        .fold(f64::NEG_INFINITY, f64::max)
        - grid.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
    let flat_objective = grid_range < 2.0 * noise_sd;

    let report = OmegaReport {
        theta_omega,
        objective: obj_min,
        flat_objective,
        grid,
        m,
        seed,
    };
    Ok((theta_omega, report))
}

/// Run the full staged fit: radial likelihood, both tail angular likelihoods,
/// then the weight parameter by simulated method of moments.
pub fn fit_hybrid(data: &Dataset<f64>, opts: &HybridOptions) -> Result<HybridFit> {
    if data.n() < 200 {
        return Err(Error::InsufficientData(format!(
            "the staged fit needs at least 200 rows, got {}",
            data.n()
        )));
    }
    if !(opts.q_lower > 0.0 && opts.q_lower < opts.q_upper && opts.q_upper < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tail levels must satisfy 0 < q_lower < q_upper < 1, got {} and {}",
            opts.q_lower, opts.q_upper
        )));
    }

    let (radial, radial_report) = fit_radial(data).map_err(|e| e.in_stage("radial"))?;
    let (theta_l, lower_report) = fit_angular(data, Tail::Lower, opts.q_lower)
        .map_err(|e| e.in_stage("angular-lower"))?;
    let (theta_u, upper_report) = fit_angular(data, Tail::Upper, opts.q_upper)
        .map_err(|e| e.in_stage("angular-upper"))?;
    let (theta_omega, omega_report) = fit_omega_mom_with(
        data,
        (&radial, theta_l, theta_u),
        opts.m,
        opts.seed,
        opts.criterion,
    )
    .map_err(|e| e.in_stage("omega-mom"))?;

    let radii = data.radii();
    let r0_lower = stats::quantile(&radii, opts.q_lower);
    let r0_upper = stats::quantile(&radii, opts.q_upper);
    let params = MegpdParams::new(radial, theta_l, theta_u, theta_omega)
        .map_err(|e| e.in_stage("assemble"))?;

    Ok(HybridFit {
        params,
        thresholds: (r0_lower, r0_upper),
        counts: Counts {
            n_total: data.n(),
            n_lower: lower_report.n_used + lower_report.n_boundary_excluded,
            n_upper: upper_report.n_used + upper_report.n_boundary_excluded,
        },
        mom_objective: omega_report.objective,
        reports: Reports {
            radial: radial_report,
            lower: lower_report,
            upper: upper_report,
            omega: omega_report,
        },
    })
}
