//! Log-factorials and associated Laguerre polynomials.
//!
//! Everything here is evaluated so that matrix elements of displacement-type
//! operators stay finite up to 64 levels per mode.

use crate::scalar::Real;

/// Largest per-mode truncation supported by the analytic matrix elements.
pub const MAX_DIM: usize = 64;

/// `ln(n!)`, summed directly. Exact enough for `n <= 200`.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `ln sqrt(n!/m!)`.
pub fn ln_sqrt_factorial_ratio(n: usize, m: usize) -> f64 {
    0.5 * (ln_factorial(n) - ln_factorial(m))
}

/// Associated Laguerre polynomial `L_n^{(k)}(x)` by upward three-term recurrence.
pub fn assoc_laguerre<R: Real>(n: usize, k: usize, x: R) -> R {
    let kk = R::from_count(k);
    let mut prev = R::one();
    if n == 0 {
        return prev;
    }
    let mut cur = R::one() + kk - x;
    for j in 1..n {
        let jj = R::from_count(j);
        let next = ((R::lit(2.0) * jj + R::one() + kk - x) * cur - (jj + kk) * prev) / (jj + R::one());
        prev = cur;
        cur = next;
    }
    cur
}

/// All `L_j^{(k)}(x)` for `j = 0..=n`.
pub fn assoc_laguerre_table<R: Real>(n: usize, k: usize, x: R) -> Vec<R> {
    let kk = R::from_count(k);
    let mut out = Vec::with_capacity(n + 1);
    out.push(R::one());
    if n == 0 {
        return out;
    }
    out.push(R::one() + kk - x);
    for j in 1..n {
        let jj = R::from_count(j);
        let next = ((R::lit(2.0) * jj + R::one() + kk - x) * out[j] - (jj + kk) * out[j - 1]) / (jj + R::one());
        out.push(next);
    }
    out
}
