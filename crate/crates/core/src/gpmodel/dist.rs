//! Gamma and Beta draws that stay well defined for the vanishing shape
//! parameters produced by near-flat hyper-priors.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// `ln X` for `X ~ Gamma(shape, 1)`; `-inf` when `shape == 0`.
///
/// Shapes below one use `X = Y · U^{1/shape}`, `Y ~ Gamma(shape + 1, 1)`,
/// evaluated in log space so tiny shapes do not underflow to zero.
pub fn ln_gamma_unit(shape: f64, rng: &mut impl Rng) -> f64 {
    debug_assert!(shape >= 0.0);
    if shape == 0.0 {
        return f64::NEG_INFINITY;
    }
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("finite positive shape");
        return g.sample(rng).ln();
    }
    let g = Gamma::new(shape + 1.0, 1.0).expect("finite positive shape");
    let u: f64 = rng.random();
    // u in [0, 1): map 0 to the smallest positive value
    let u = u.max(f64::MIN_POSITIVE);
    g.sample(rng).ln() + u.ln() / shape
}

/// Shape/rate Gamma draw clamped into the positive normal range.
pub fn gamma(shape: f64, rate: f64, rng: &mut impl Rng) -> f64 {
    (ln_gamma_unit(shape, rng) - rate.ln())
        .exp()
        .clamp(f64::MIN_POSITIVE, f64::MAX)
}

/// Beta draw clamped into the open interval `(0, 1)`.
pub fn beta(alpha: f64, beta: f64, rng: &mut impl Rng) -> f64 {
    let la = ln_gamma_unit(alpha, rng);
    let lb = ln_gamma_unit(beta, rng);
    let p = if la == f64::NEG_INFINITY && lb == f64::NEG_INFINITY {
        0.5
    } else {
        1.0 / (1.0 + (lb - la).exp())
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn normal(mean: f64, precision: f64, rng: &mut impl Rng) -> f64 {
    let e: f64 = StandardNormal.sample(rng);
    mean + e / precision.sqrt()
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}
