//! Small statistical utilities shared across modules.

use crate::scalar::Real;

pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().copied().sum::<T>() / T::from_f64(xs.len() as f64)
}

/// Unbiased sample variance (n-1 denominator).
pub fn sample_variance<T: Real>(xs: &[T]) -> T {
    let n = xs.len();
    if n < 2 {
        return T::nan();
    }
    let m = mean(xs);
    let ss = xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>();
    ss / T::from_f64((n - 1) as f64)
}

pub fn sample_sd<T: Real>(xs: &[T]) -> T {
    sample_variance(xs).sqrt()
}

/// Standard error of the sample mean.
pub fn std_error<T: Real>(xs: &[T]) -> T {
    sample_sd(xs) / T::from_f64(xs.len() as f64).sqrt()
}

/// Unbiased sample covariance of paired observations.
pub fn sample_covariance<T: Real>(xs: &[T], ys: &[T]) -> T {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return T::nan();
    }
    let mx = mean(xs);
    let my = mean(ys);
    let ss = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (x - mx) * (y - my))
        .sum::<T>();
    ss / T::from_f64((n - 1) as f64)
}

/// Empirical quantile by linear interpolation on a sorted slice
/// (`h = (n-1) p`, the common "type 7" rule).
pub fn quantile_sorted<T: Real>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&p));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = T::from_f64(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Sort a copy and take the empirical quantile.
pub fn quantile<T: Real>(xs: &[T], p: f64) -> T {
    let mut v = xs.to_vec();
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-finite value"));
    quantile_sorted(&v, p)
}

/// Ranks in 1..=n with ties assigned their average rank. Returns the ranks
/// and the number of observations involved in at least one tie.
pub fn ranks_average_ties<T: Real>(xs: &[T]) -> (Vec<f64>, usize) {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&i, &j| xs[i].partial_cmp(&xs[j]).expect("non-finite value"));
    let mut ranks = vec![0.0f64; n];
    let mut tied = 0usize;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let avg = (start + 1 + end) as f64 / 2.0; // mean of start+1 ..= end
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        if end - start > 1 {
            tied += end - start;
        }
        start = end;
    }
    (ranks, tied)
}

/// One-sample Kolmogorov-Smirnov statistic of `data` against `cdf`.
pub fn ks_statistic<T: Real>(data: &[T], cdf: impl Fn(T) -> T) -> f64 {
    let mut v = data.to_vec();
    v.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-finite value"));
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x).as_f64();
        let upper = (i + 1) as f64 / n - f;
        let lower = f - i as f64 / n;
        d = d.max(upper).max(lower);
    }
    d
}

/// Asymptotic one-sample KS critical value at significance `alpha`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / (2.0 * n as f64)).sqrt()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(|x, y| x.partial_cmp(y).expect("non-finite value"));
    b.sort_unstable_by(|x, y| x.partial_cmp(y).expect("non-finite value"));
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(diff);
    }
    d
}

/// Asymptotic two-sample KS critical value at significance `alpha`.
pub fn ks_two_sample_critical(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}
