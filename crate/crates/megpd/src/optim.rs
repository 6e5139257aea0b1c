//! Derivative-free and gradient-based local optimizers used by the fitting
//! routines. All minimize.

use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimOptions<T> {
    /// Convergence tolerance on the objective spread (simplex) or the
    /// gradient norm (quasi-Newton).
    pub tol: T,
    pub max_iters: usize,
    /// Initial simplex edge length (absolute, per coordinate).
    pub init_step: T,
}

impl<T: Real> Default for OptimOptions<T> {
    fn default() -> Self {
        OptimOptions {
            tol: T::from_f64(1e-8),
            max_iters: 2000,
            init_step: T::from_f64(0.25),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimResult<T> {
    pub x: Vec<T>,
    pub fx: T,
    pub iterations: usize,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder-Mead downhill simplex with standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
pub fn nelder_mead<T: Real>(
    mut f: impl FnMut(&[T]) -> T,
    x0: &[T],
    opts: &OptimOptions<T>,
) -> OptimResult<T> {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[T], evals: &mut usize| -> T {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            T::infinity()
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<T>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.init_step;
        simplex.push(v);
    }
    let mut fvals: Vec<T> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let one = T::one();
    let two = T::from_f64(2.0);
    let half = T::from_f64(0.5);

    let mut iterations = 0usize;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        // Order best..worst.
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_unstable_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).unwrap());
        let reorder_s: Vec<Vec<T>> = idx.iter().map(|&i| simplex[i].clone()).collect();
        let reorder_f: Vec<T> = idx.iter().map(|&i| fvals[i]).collect();
        simplex = reorder_s;
        fvals = reorder_f;

        let spread = fvals[n] - fvals[0];
        if spread <= opts.tol * (one + fvals[0].abs()) {
            converged = true;
            break;
        }

        // Centroid of all but the worst.
        let mut centroid = vec![T::zero(); n];
        for v in simplex.iter().take(n) {
            for (c, &vi) in centroid.iter_mut().zip(v) {
                *c += vi;
            }
        }
        let inv = one / T::from_f64(n as f64);
        for c in centroid.iter_mut() {
            *c *= inv;
        }

        let worst = simplex[n].clone();
        let point = |coef: T| -> Vec<T> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(&c, &w)| c + coef * (c - w))
                .collect()
        };

        let xr = point(one);
        let fr = eval(&xr, &mut evals);
        if fr < fvals[0] {
            let xe = point(two);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                fvals[n] = fe;
            } else {
                simplex[n] = xr;
                fvals[n] = fr;
            }
        } else if fr < fvals[n - 1] {
            simplex[n] = xr;
            fvals[n] = fr;
        } else {
            // Contraction (outside if the reflection improved on the worst).
            let (xc, fc) = if fr < fvals[n] {
                let xc = point(half);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = point(-half);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < fvals[n].min(fr) {
                simplex[n] = xc;
                fvals[n] = fc;
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].clone();
                for i in 1..=n {
                    for (s, &b) in simplex[i].iter_mut().zip(&best) {
                        *s = b + half * (*s - b);
                    }
                    fvals[i] = eval(&simplex[i].clone(), &mut evals);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if fvals[i] < fvals[best] {
            best = i;
        }
    }
    OptimResult {
        x: simplex[best].clone(),
        fx: fvals[best],
        iterations,
        evals,
        converged,
    }
}

/// BFGS quasi-Newton with Armijo backtracking. `f_grad` returns the objective
/// and its gradient.
pub fn bfgs<T: Real>(
    mut f_grad: impl FnMut(&[T]) -> (T, Vec<T>),
    x0: &[T],
    opts: &OptimOptions<T>,
) -> OptimResult<T> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f_grad(&x);
    let mut evals = 1usize;
    // Inverse Hessian approximation, dense row-major identity.
    let mut h: Vec<T> = (0..n * n)
        .map(|i| if i % (n + 1) == 0 { T::one() } else { T::zero() })
        .collect();

    let c1 = T::from_f64(1e-4);
    let half = T::from_f64(0.5);
    let mut iterations = 0usize;
    let mut converged = false;
    let mut stalled = 0usize;

    while iterations < opts.max_iters {
        iterations += 1;
        let scale = T::one() + fx.abs();
        let gnorm = g.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
        if gnorm <= opts.tol * scale || stalled >= 2 {
            converged = true;
            break;
        }
        // d = -H g
        let mut d = vec![T::zero(); n];
        for i in 0..n {
            let mut s = T::zero();
            for j in 0..n {
                s += h[i * n + j] * g[j];
            }
            d[i] = -s;
        }
        let mut slope = T::zero();
        for i in 0..n {
            slope += g[i] * d[i];
        }
        if slope >= T::zero() {
            // Not a descent direction; reset to steepest descent.
            for i in 0..n * n {
                h[i] = if i % (n + 1) == 0 { T::one() } else { T::zero() };
            }
            for i in 0..n {
                d[i] = -g[i];
            }
            slope = -g.iter().map(|&v| v * v).sum::<T>();
        }

        let mut t = T::one();
        let mut x_new;
        let fx_new;
        let g_new;
        loop {
            x_new = x
                .iter()
                .zip(&d)
                .map(|(&xi, &di)| xi + t * di)
                .collect::<Vec<_>>();
            let (fv, gv) = f_grad(&x_new);
            evals += 1;
            if fv <= fx + c1 * t * slope || t < T::from_f64(1e-14) {
                fx_new = fv;
                g_new = gv;
                break;
            }
            t *= half;
        }
        if !fx_new.is_finite() {
            break;
        }
        if fx - fx_new <= opts.tol * (T::one() + fx.abs()) {
            stalled += 1;
        } else {
            stalled = 0;
        }

        // BFGS update with curvature guard.
        let s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let mut sy = T::zero();
        for i in 0..n {
            sy += s[i] * y[i];
        }
        if sy > T::from_f64(1e-12) {
            let rho = T::one() / sy;
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let mut hy = vec![T::zero(); n];
            for i in 0..n {
                let mut acc = T::zero();
                for j in 0..n {
                    acc += h[i * n + j] * y[j];
                }
                hy[i] = acc;
            }
            let mut yhy = T::zero();
            for i in 0..n {
                yhy += y[i] * hy[i];
            }
            for i in 0..n {
                for j in 0..n {
                    let term = rho * (s[i] * hy[j] + hy[i] * s[j])
                        - rho * rho * yhy * s[i] * s[j]
                        - rho * s[i] * s[j];
                    h[i * n + j] = h[i * n + j] - term;
                }
            }
        }
        x = x_new;
        fx = fx_new;
        g = g_new;
    }

    OptimResult {
        x,
        fx,
        iterations,
        evals,
        converged,
    }
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_section<T: Real>(
    mut f: impl FnMut(T) -> T,
    mut a: T,
    mut b: T,
    tol: T,
    max_iters: usize,
) -> (T, T) {
    let phi = T::from_f64(0.618_033_988_749_894_8);
    let mut x1 = b - phi * (b - a);
    let mut x2 = a + phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iters {
        if (b - a).abs() <= tol {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_minimizes_quadratic() {
        let res = nelder_mead(
            |x| (x[0] - 3.0) * (x[0] - 3.0) + 2.0 * (x[1] + 1.0) * (x[1] + 1.0),
            &[0.0f64, 0.0],
            &OptimOptions::default(),
        );
        assert!(res.converged);
        assert!((res.x[0] - 3.0).abs() < 1e-4);
        assert!((res.x[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let res = nelder_mead(
            |x| {
                let a = 1.0 - x[0];
                let b = x[1] - x[0] * x[0];
                a * a + 100.0 * b * b
            },
            &[-1.2f64, 1.0],
            &OptimOptions {
                max_iters: 5000,
                ..OptimOptions::default()
            },
        );
        assert!((res.x[0] - 1.0).abs() < 1e-3);
        assert!((res.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn bfgs_minimizes_quadratic() {
        let res = bfgs(
            |x| {
                let f = (x[0] - 2.0) * (x[0] - 2.0) + 0.5 * x[1] * x[1];
                (f, vec![2.0 * (x[0] - 2.0), x[1]])
            },
            &[10.0f64, -4.0],
            &OptimOptions::default(),
        );
        assert!(res.converged);
        assert!((res.x[0] - 2.0).abs() < 1e-6);
        assert!(res.x[1].abs() < 1e-6);
    }

    #[test]
    fn golden_section_finds_min() {
        let (x, _) = golden_section(|x: f64| (x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-10, 200);
        assert!((x - 0.3).abs() < 1e-8);
    }
}
