//! Scalar statistics shared by the sampler and the analysis tables.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

/// A normal distribution parameterized by mean and variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalParams {
    pub mean: f64,
    pub var: f64,
}

impl NormalParams {
    pub fn new(mean: f64, var: f64) -> Self {
        Self { mean, var }
    }

    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.sd() * z
    }

    /// Draw restricted to the open interval `(lower, upper)`.
    pub fn sample_truncated<R: Rng + ?Sized>(&self, lower: f64, upper: f64, rng: &mut R) -> f64 {
        sample_truncated_normal(self.mean, self.sd(), lower, upper, rng)
    }
}

/// A gamma distribution parameterized by shape and rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn var(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // Parameters come from conjugate updates with shape >= 1 and rate > 0.
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("gamma parameters are positive and finite")
            .sample(rng)
    }
}

/// Standard normal CDF, accurate in both tails.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// Inverse-CDF draw from N(mean, sd²) truncated to `[lower, upper]`.
///
/// The interval is reflected into the lower tail before inverting so that
/// the CDF values keep full relative precision far from the mean. Beyond the
/// range where the CDF underflows, the tail is approximated by an exponential
/// with the local hazard rate.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> f64 {
    debug_assert!(lower < upper, "empty truncation interval");
    if sd <= 0.0 || !sd.is_finite() {
        return mean.clamp(lower, upper);
    }
    let mut alpha = (lower - mean) / sd;
    let mut beta = (upper - mean) / sd;
    let flip = alpha + beta > 0.0;
    if flip {
        (alpha, beta) = (-beta, -alpha);
    }
    let p_lo = std_normal_cdf(alpha);
    let p_hi = std_normal_cdf(beta);
    let u: f64 = rng.random();
    let z = if p_hi > 0.0 {
        std_normal_quantile(p_lo + u * (p_hi - p_lo))
    } else {
        // Density near beta behaves like exp(-|beta| (beta - z)).
        let rate = -beta;
        let span = (beta - alpha) * rate;
        let e = -(-u * (-(-span).exp_m1())).ln_1p();
        beta - e / rate
    };
    let z = if z.is_nan() { beta } else { z.clamp(alpha, beta) };
    let z = if flip { -z } else { z };
    (mean + sd * z).clamp(lower, upper)
}

/// Mean and variance of N(mean, sd²) truncated to `[lower, upper]`.
pub fn truncated_normal_moments(mean: f64, sd: f64, lower: f64, upper: f64) -> NormalParams {
    let alpha = (lower - mean) / sd;
    let beta = (upper - mean) / sd;
    let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mass = std_normal_cdf(beta) - std_normal_cdf(alpha);
    let (pa, pb) = (pdf(alpha), pdf(beta));
    let az = if alpha.is_finite() { alpha * pa } else { 0.0 };
    let bz = if beta.is_finite() { beta * pb } else { 0.0 };
    let shift = (pa - pb) / mass;
    NormalParams {
        mean: mean + sd * shift,
        var: sd * sd * (1.0 + (az - bz) / mass - shift * shift),
    }
}

/// Log density of N(mean, var) at `x`.
pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + r * r / var)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with denominator `n - 1`.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Type-7 (linear interpolation) quantile of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Empirical summary of one scalar's draws.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarSummary {
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q97_5: f64,
}

impl ScalarSummary {
    /// Sums run over the sorted draws, so the result does not depend on the
    /// order in which draws were pooled.
    pub fn from_draws(draws: &[f64]) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::TooFewDraws { got: 0, need: 1 });
        }
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = mean(&sorted);
        let sd = sample_variance(&sorted).sqrt();
        let q2_5 = quantile_sorted(&sorted, 0.025);
        let q97_5 = quantile_sorted(&sorted, 0.975).max(q2_5);
        Ok(Self {
            mean,
            sd,
            q2_5,
            q97_5,
        })
    }
}
