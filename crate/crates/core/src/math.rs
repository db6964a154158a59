//! Log-domain helpers and Dirichlet/categorical sampling.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// `ln(sum(exp(x)))`; empty input gives negative infinity.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalises log-weights into a probability vector.
pub fn softmax(log_w: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(log_w);
    log_w.iter().map(|w| (w - z).exp()).collect()
}

/// Natural-log Shannon entropy of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Log of the multivariate Beta function `B(a) = prod Γ(a_i) / Γ(sum a_i)`.
pub fn ln_multivariate_beta(a: &[f64]) -> f64 {
    a.iter().map(|&x| ln_gamma(x)).sum::<f64>() - ln_gamma(a.iter().sum())
}

/// Draws an index from unnormalised non-negative weights.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "categorical weights sum to zero");
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    // Rounding left a sliver: return the last index with positive mass.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws from a categorical given log-weights.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> usize {
    sample_categorical(&softmax(log_w), rng)
}

/// Draws from `Dirichlet(alpha)`.
///
/// Works in log space: for shape `a < 1` the Gamma draw is taken as
/// `Gamma(a + 1) * U^(1/a)`, which would underflow to zero for small `a` if
/// exponentiated directly.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    assert!(!alpha.is_empty());
    if alpha.len() == 1 {
        return vec![1.0];
    }
    let log_g: Vec<f64> = alpha
        .iter()
        .map(|&a| {
            assert!(a > 0.0 && a.is_finite(), "Dirichlet concentration {a} must be positive");
            if a >= 1.0 {
                Gamma::new(a, 1.0).unwrap().sample(rng).ln()
            } else {
                let g = Gamma::new(a + 1.0, 1.0).unwrap().sample(rng).ln();
                let u: f64 = rng.random::<f64>();
                // u == 0 would give -inf, a legitimate zero coordinate.
                g + u.ln() / a
            }
        })
        .collect();
    let p = softmax(&log_g);
    renormalise(p)
}

/// Forces an exactly normalised simplex after floating-point drift.
pub fn renormalise(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    for x in &mut p {
        *x /= s;
    }
    p
}

pub fn argmax(xs: &[f64]) -> usize {
    // First maximum wins ties.
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
