//! Scalar abstraction for the numerical core: `f32` or `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point scalar the core math is written against.
pub trait Real:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Natural logarithm of the gamma function.
    fn ln_gamma(self) -> Self {
        Self::from_f64(statrs::function::gamma::ln_gamma(self.as_f64()))
    }
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Exact multiset sum: compensated summation over canonically sorted values.
///
/// The result depends only on the multiset of inputs, not their order, so
/// reductions built on it are bit-identical under permutation. The algorithm
/// keeps a list of non-overlapping partials (Shewchuk) and rounds once at the
/// end; doubling every input exactly doubles the result.
pub fn canonical_sum<T: Real>(values: &mut [T]) -> T {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("non-finite value in sum"));
    let mut partials: Vec<T> = Vec::with_capacity(8);
    for &v in values.iter() {
        let mut x = v;
        let mut i = 0;
        for k in 0..partials.len() {
            let mut y = partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != T::zero() {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // Partials are non-overlapping and sorted by magnitude; sum from the
    // smallest, correcting the final rounding like CPython's fsum.
    let mut n = partials.len();
    if n == 0 {
        return T::zero();
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = T::zero();
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != T::zero() {
            break;
        }
    }
    // Round-half-even correction against the next partial.
    if n > 0
        && ((lo < T::zero() && partials[n - 1] < T::zero())
            || (lo > T::zero() && partials[n - 1] > T::zero()))
    {
        let y = lo * T::from_f64(2.0);
        let x = hi + y;
        let yr = x - hi;
        if y == yr {
            hi = x;
        }
    }
    hi
}
