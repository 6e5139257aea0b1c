//! Model-checking machinery: rank-based tail-dependence chi curves,
//! observed-versus-simulated QQ data, bootstrap envelopes (pointwise and
//! simultaneous), and estimator recovery summaries. Everything is emitted as
//! plain data for external plotting.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{simulate, MegpdParams};
use crate::stats;
use crate::streams::derive_seed;
use crate::Tail;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Empirical tail-dependence curve with optional bootstrap bands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiCurve {
    pub levels: Vec<f64>,
    pub chi_hat: Vec<f64>,
    pub tail: Tail,
    /// Model-implied curve from a large simulation, when available.
    pub chi_model: Option<Vec<f64>>,
    pub pointwise_band: Option<(Vec<f64>, Vec<f64>)>,
    pub overall_band: Option<(Vec<f64>, Vec<f64>)>,
    /// Bootstrap replicates behind the bands (0 when absent).
    pub b: usize,
}

/// Default level grids: 101 points on [0.8, 0.995] (upper) or
/// [0.005, 0.2] (lower).
pub fn default_chi_levels(tail: Tail) -> Vec<f64> {
    let (lo, hi) = match tail {
        Tail::Upper => (0.8, 0.995),
        Tail::Lower => (0.005, 0.2),
    };
    (0..=100).map(|i| lo + (hi - lo) * i as f64 / 100.0).collect()
}

/// Rank-based chi: with pseudo-uniforms `u = rank / (n+1)`,
/// upper chi(q) = P(u1 > q, u2 > q) / (1 - q) and
/// lower chi(q) = P(u1 < q, u2 < q) / q.
pub fn chi_empirical(data: &Dataset<f64>, tail: Tail, levels: &[f64]) -> Result<Vec<f64>> {
    let n = data.n();
    if n < 100 {
        return Err(Error::InsufficientData(format!(
            "chi needs at least 100 rows, got {n}"
        )));
    }
    if levels.iter().any(|q| !(0.0 < *q && *q < 1.0)) {
        return Err(Error::Domain("chi levels must lie in (0,1)".into()));
    }
    let (r1, _) = stats::ranks_average_ties(&data.column(0));
    let (r2, _) = stats::ranks_average_ties(&data.column(1));
    let scale = 1.0 / (n as f64 + 1.0);
    let u: Vec<(f64, f64)> = r1
        .iter()
        .zip(&r2)
        .map(|(&a, &b)| (a * scale, b * scale))
        .collect();
    Ok(levels
        .iter()
        .map(|&q| {
            let count = match tail {
                Tail::Upper => u.iter().filter(|(a, b)| *a > q && *b > q).count(),
                Tail::Lower => u.iter().filter(|(a, b)| *a < q && *b < q).count(),
            };
            let denom = match tail {
                Tail::Upper => 1.0 - q,
                Tail::Lower => q,
            };
            count as f64 / n as f64 / denom
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QqTarget {
    /// Marginal component (0 or 1).
    Margin(usize),
    /// The row sum `y1 + y2`.
    Sum,
}

impl QqTarget {
    fn values(&self, data: &Dataset<f64>) -> Vec<f64> {
        match self {
            QqTarget::Margin(j) => data.column(*j),
            QqTarget::Sum => data.radii(),
        }
    }
}

/// Observed-versus-simulated quantile pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QqData {
    pub probs: Vec<f64>,
    pub observed_q: Vec<f64>,
    pub simulated_q: Vec<f64>,
    pub pointwise_band: Option<(Vec<f64>, Vec<f64>)>,
    pub overall_band: Option<(Vec<f64>, Vec<f64>)>,
    pub target: QqTarget,
}

/// Default QQ probability grid: 99 equispaced percentiles.
pub fn default_qq_probs() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

fn quantile_curve(values: &mut Vec<f64>, probs: &[f64]) -> Vec<f64> {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    probs.iter().map(|&p| stats::quantile_sorted(values, p)).collect()
}

/// Empirical quantiles of the observed target against quantiles of a large
/// model simulation (`m` draws, default 100 per observed row).
pub fn qq_model_vs_data(
    data: &Dataset<f64>,
    params: &MegpdParams<f64>,
    target: QqTarget,
    probs: &[f64],
    m: usize,
    seed: u64,
) -> Result<QqData> {
    if let QqTarget::Margin(j) = target {
        if j >= 2 {
            return Err(Error::DimensionMismatch(format!(
                "margin index must be 0 or 1, got {j}"
            )));
        }
    }
    if probs.windows(2).any(|w| w[0] >= w[1]) || probs.iter().any(|p| !(0.0 < *p && *p < 1.0)) {
        return Err(Error::Domain(
            "QQ probabilities must be strictly increasing inside (0,1)".into(),
        ));
    }
    let mut observed = target.values(data);
    let observed_q = quantile_curve(&mut observed, probs);
    let sim = simulate(params, m, seed)?;
    let mut simulated = target.values(&sim);
    let simulated_q = quantile_curve(&mut simulated, probs);
    Ok(QqData {
        probs: probs.to_vec(),
        observed_q,
        simulated_q,
        pointwise_band: None,
        overall_band: None,
        target,
    })
}

#[derive(Debug, Clone)]
pub enum BootstrapMode {
    /// Resample rows of the data with replacement.
    Nonparametric,
    /// Simulate fresh datasets of the same size from the parameters.
    Parametric(MegpdParams<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope {
    pub pointwise: (Vec<f64>, Vec<f64>),
    pub overall: (Vec<f64>, Vec<f64>),
    pub level: f64,
    pub b: usize,
}

/// Bootstrap bands for any curve-valued statistic.
///
/// The pointwise band takes per-gridpoint empirical quantiles at
/// `(1 - level)/2` on each side. The overall band is a rank envelope: the
/// k-th extreme envelopes with the largest k whose band still contains at
/// least `level` of the bootstrap curves entirely.
pub fn bootstrap_envelope<F>(
    statistic: F,
    data: &Dataset<f64>,
    mode: &BootstrapMode,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<Envelope>
where
    F: Fn(&Dataset<f64>) -> Vec<f64> + Sync,
{
    if b < 200 {
        return Err(Error::InsufficientData(format!(
            "at least 200 bootstrap replicates are required, got {b}"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Domain(format!("level must be in (0,1), got {level}")));
    }
    let n = data.n();
    let curves: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let replicate = match mode {
                BootstrapMode::Nonparametric => {
                    use rand::Rng;
                    let mut rng = crate::streams::substream(derive_seed(seed, rep as u64), 0);
                    let rows = (0..n)
                        .map(|_| data.rows()[rng.random_range(0..n)])
                        .collect();
                    Dataset::from_rows(rows)?
                }
                BootstrapMode::Parametric(params) => {
                    simulate(params, n, derive_seed(seed, rep as u64))?
                }
            };
            Ok(statistic(&replicate))
        })
        .collect::<Result<Vec<_>>>()?;

    let g = curves[0].len();
    if curves.iter().any(|c| c.len() != g) {
        return Err(Error::DimensionMismatch(
            "statistic returned curves of different lengths".into(),
        ));
    }

    // Per-gridpoint sorted bootstrap values.
    let mut columns: Vec<Vec<f64>> = (0..g)
        .map(|j| curves.iter().map(|c| c[j]).collect())
        .collect();
    for col in columns.iter_mut() {
        col.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite statistic"));
    }
    let alpha = 1.0 - level;
    let pointwise_lo: Vec<f64> = columns
        .iter()
        .map(|c| stats::quantile_sorted(c, alpha / 2.0))
        .collect();
    let pointwise_hi: Vec<f64> = columns
        .iter()
        .map(|c| stats::quantile_sorted(c, 1.0 - alpha / 2.0))
        .collect();

    // Rank envelope: find the largest k whose k-th extreme band still covers
    // at least `level` of the curves entirely.
    let coverage = |k: usize| -> (f64, Vec<f64>, Vec<f64>) {
        let lo: Vec<f64> = columns.iter().map(|c| c[k - 1]).collect();
        let hi: Vec<f64> = columns.iter().map(|c| c[c.len() - k]).collect();
        let inside = curves
            .iter()
            .filter(|c| {
                c.iter()
                    .enumerate()
                    .all(|(j, &v)| v >= lo[j] && v <= hi[j])
            })
            .count();
        (inside as f64 / b as f64, lo, hi)
    };
    let mut chosen = coverage(1);
    for k in 2..=(b / 2).max(1) {
        let cand = coverage(k);
        if cand.0 >= level {
            chosen = cand;
        } else {
            break;
        }
    }

    Ok(Envelope {
        pointwise: (pointwise_lo, pointwise_hi),
        overall: (chosen.1, chosen.2),
        level,
        b,
    })
}

/// Per-parameter recovery summaries over a test bed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub parameter: String,
    pub bias: f64,
    pub rmse: f64,
    pub median_abs_error: f64,
    pub variance: f64,
}

pub const PARAMETER_NAMES: [&str; 6] = [
    "kappa",
    "sigma",
    "xi",
    "theta_lower",
    "theta_upper",
    "theta_omega",
];

pub fn recovery_metrics(
    truths: &[MegpdParams<f64>],
    estimates: &[MegpdParams<f64>],
) -> Result<Vec<RecoveryRow>> {
    if truths.len() != estimates.len() {
        return Err(Error::LengthMismatch(format!(
            "{} truths vs {} estimates",
            truths.len(),
            estimates.len()
        )));
    }
    if truths.len() < 2 {
        return Err(Error::InsufficientData(
            "recovery metrics need at least 2 cases".into(),
        ));
    }
    let mut rows = Vec::with_capacity(6);
    for p in 0..6 {
        let errors: Vec<f64> = truths
            .iter()
            .zip(estimates)
            .map(|(t, e)| e.to_array()[p] - t.to_array()[p])
            .collect();
        let est_vals: Vec<f64> = estimates.iter().map(|e| e.to_array()[p]).collect();
        let bias = stats::mean(&errors);
        let rmse = stats::mean(&errors.iter().map(|e| e * e).collect::<Vec<_>>()).sqrt();
        let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
        abs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let median_abs_error = stats::quantile_sorted(&abs, 0.5);
        rows.push(RecoveryRow {
            parameter: PARAMETER_NAMES[p].to_string(),
            bias,
            rmse,
            median_abs_error,
            variance: stats::sample_variance(&est_vals),
        });
    }
    Ok(rows)
}

/// CSV writers with fixed, documented headers.
pub fn chi_to_csv(curve: &ChiCurve, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "level,chi_data,chi_model,pw_lo,pw_hi,ov_lo,ov_hi")?;
    for i in 0..curve.levels.len() {
        let model = curve.chi_model.as_ref().map_or(f64::NAN, |c| c[i]);
        let (pl, ph) = curve
            .pointwise_band
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |(l, h)| (l[i], h[i]));
        let (ol, oh) = curve
            .overall_band
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |(l, h)| (l[i], h[i]));
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            curve.levels[i], curve.chi_hat[i], model, pl, ph, ol, oh
        )?;
    }
    Ok(())
}

pub fn qq_to_csv(qq: &QqData, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "prob,observed_q,simulated_q,pw_lo,pw_hi,ov_lo,ov_hi")?;
    for i in 0..qq.probs.len() {
        let (pl, ph) = qq
            .pointwise_band
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |(l, h)| (l[i], h[i]));
        let (ol, oh) = qq
            .overall_band
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |(l, h)| (l[i], h[i]));
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            qq.probs[i], qq.observed_q[i], qq.simulated_q[i], pl, ph, ol, oh
        )?;
    }
    Ok(())
}

pub fn recovery_to_csv(rows: &[RecoveryRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "parameter,bias,rmse,median_abs_error,variance")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.parameter, r.bias, r.rmse, r.median_abs_error, r.variance
        )?;
    }
    Ok(())
}
