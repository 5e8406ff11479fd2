//! The shallow stochastic kernel: a bounded power law whose upper end grows
//! with the author's cumulative output, a Poisson draw on top of it, and
//! their composition into an annual publication increment.
//!
//! For a cumulative count `h` the power law lives on `[0, scale]` with
//! `scale = beta1 * h^beta2` and density `q z^(q-1) / scale^q`. The annual
//! increment is `y ~ Poisson(x)` with `x` drawn from that law.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::rng::RngStream;

/// Below this mean Poisson variates come from the exponential-product
/// inversion; at or above it from transformed rejection.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("cumulative count must be non-negative and finite, got {0}")]
    NegativeCount(f64),
    #[error("Poisson mean must be non-negative and finite, got {0}")]
    PoissonMean(f64),
    #[error("invalid power-law parameters: {0}")]
    Params(String),
    #[error("rollout count must be at least 1")]
    NoRollouts,
}

/// Shape `q`, scale coefficient `beta1` and scale exponent `beta2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawParams {
    pub q: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for PowerLawParams {
    fn default() -> Self {
        Self {
            q: 0.1,
            beta1: 0.33,
            beta2: 1.22,
        }
    }
}

impl PowerLawParams {
    pub fn new(q: f64, beta1: f64, beta2: f64) -> Result<Self, DomainError> {
        let p = Self { q, beta1, beta2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.q.is_finite() && self.q > 0.0) {
            return Err(DomainError::Params(format!(
                "q must be > 0, got {}",
                self.q
            )));
        }
        if !(self.beta1.is_finite() && self.beta1 > 0.0) {
            return Err(DomainError::Params(format!(
                "beta1 must be > 0, got {}",
                self.beta1
            )));
        }
        if !(self.beta2.is_finite() && self.beta2 >= 0.0) {
            return Err(DomainError::Params(format!(
                "beta2 must be >= 0, got {}",
                self.beta2
            )));
        }
        Ok(())
    }

    /// Mean of the power law at a given scale, `q * scale / (q + 1)`.
    pub fn mean_at_scale(&self, scale: f64) -> f64 {
        self.q * scale / (self.q + 1.0)
    }
}

fn check_count(h: f64) -> Result<(), DomainError> {
    if h.is_finite() && h >= 0.0 {
        Ok(())
    } else {
        Err(DomainError::NegativeCount(h))
    }
}

/// `beta1 * h^beta2`, with `0^beta2 = 0` for `beta2 > 0`.
pub fn powerlaw_scale(h: f64, params: &PowerLawParams) -> Result<f64, DomainError> {
    check_count(h)?;
    if h == 0.0 && params.beta2 > 0.0 {
        return Ok(0.0);
    }
    Ok(params.beta1 * h.powf(params.beta2))
}

/// Inverse-CDF draw from the bounded power law with an explicit scale.
#[inline]
pub fn powerlaw_sample_scaled(scale: f64, q: f64, rng: &mut RngStream) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u = rng.uniform_open_closed();
    scale * u.powf(1.0 / q)
}

/// Draw `x` in `[0, beta1 * h^beta2]` from the power law.
pub fn powerlaw_sample(
    h: f64,
    params: &PowerLawParams,
    rng: &mut RngStream,
) -> Result<f64, DomainError> {
    let scale = powerlaw_scale(h, params)?;
    Ok(powerlaw_sample_scaled(scale, params.q, rng))
}

/// CDF of the power law at `z`: `(z / scale)^q` on the support.
pub fn powerlaw_cdf(z: f64, h: f64, params: &PowerLawParams) -> Result<f64, DomainError> {
    let scale = powerlaw_scale(h, params)?;
    Ok(if z <= 0.0 {
        0.0
    } else if z >= scale {
        1.0
    } else {
        (z / scale).powf(params.q)
    })
}

/// `P(w = k)` for `w ~ Poisson(x)`.
pub fn poisson_pmf(k: u64, x: f64) -> f64 {
    if x == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let kf = k as f64;
    (kf * x.ln() - x - ln_gamma(kf + 1.0)).exp()
}

/// Draw `k ~ Poisson(x)`.
pub fn poisson_sample(x: f64, rng: &mut RngStream) -> Result<u64, DomainError> {
    if !(x.is_finite() && x >= 0.0) {
        return Err(DomainError::PoissonMean(x));
    }
    Ok(if x == 0.0 {
        0
    } else if x < POISSON_INVERSION_LIMIT {
        poisson_inversion(x, rng)
    } else {
        poisson_ptrs(x, rng)
    })
}

/// Multiply uniforms until the running product drops below `e^-x`.
fn poisson_inversion(x: f64, rng: &mut RngStream) -> u64 {
    let limit = (-x).exp();
    let mut k = 0u64;
    let mut prod = rng.uniform_open_closed();
    while prod > limit {
        k += 1;
        prod *= rng.uniform_open_closed();
    }
    k
}

/// Hörmann's transformed rejection with squeeze (PTRS), valid for `x >= 10`.
fn poisson_ptrs(x: f64, rng: &mut RngStream) -> u64 {
    let slam = x.sqrt();
    let loglam = x.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.uniform() - 0.5;
        let v = rng.uniform_open_closed();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + x + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -x + k * loglam - ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// One annual increment: `x` from the power law at `h`, then `y ~ Poisson(x)`.
pub fn compound_increment(
    h: f64,
    params: &PowerLawParams,
    rng: &mut RngStream,
) -> Result<u64, DomainError> {
    let x = powerlaw_sample(h, params, rng)?;
    poisson_sample(x, rng)
}

/// Monte Carlo frequency of `compound_increment(h) >= 1` over `rollouts` draws.
pub fn prob_positive_increment(
    h: f64,
    params: &PowerLawParams,
    rollouts: usize,
    rng: &mut RngStream,
) -> Result<f64, DomainError> {
    if rollouts == 0 {
        return Err(DomainError::NoRollouts);
    }
    let mut hits = 0usize;
    for _ in 0..rollouts {
        if compound_increment(h, params, rng)? >= 1 {
            hits += 1;
        }
    }
    Ok(hits as f64 / rollouts as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Oracle: E[e^-x] under the power law by Simpson's rule after the
    // substitution x = scale * u^(1/q), which removes the singularity at 0.
    fn quad_expected_exp_neg(scale: f64, q: f64) -> f64 {
        let n = 20_000;
        let h = 1.0 / n as f64;
        let f = |u: f64| (-scale * u.powf(1.0 / q)).exp();
        let mut s = f(0.0) + f(1.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(i as f64 * h);
        }
        s * h / 3.0
    }

    const SCALE_AT_5: f64 = 2.351_025_529_859_343_7;

    #[test]
    fn scale_examples() {
        let p = PowerLawParams::default();
        assert_eq!(powerlaw_scale(0.0, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(powerlaw_scale(1.0, &p).unwrap(), 0.33, epsilon = 1e-15);
        assert_abs_diff_eq!(
            powerlaw_scale(5.0, &p).unwrap(),
            SCALE_AT_5,
            epsilon = 1e-12
        );
        assert!(matches!(
            powerlaw_scale(-1.0, &p),
            Err(DomainError::NegativeCount(_))
        ));
    }

    #[test]
    fn params_validation() {
        assert!(PowerLawParams::new(0.0, 0.33, 1.22).is_err());
        assert!(PowerLawParams::new(0.1, -1.0, 1.22).is_err());
        assert!(PowerLawParams::new(0.1, 0.33, -0.1).is_err());
        assert!(PowerLawParams::new(0.1, 0.33, 0.0).is_ok());
    }

    #[test]
    fn sample_at_zero_count_is_zero() {
        let p = PowerLawParams::default();
        let mut rng = RngStream::new(1);
        for _ in 0..1000 {
            assert_eq!(powerlaw_sample(0.0, &p, &mut rng).unwrap(), 0.0);
            assert_eq!(compound_increment(0.0, &p, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn inverse_cdf_upper_endpoint() {
        // u = 1 maps to the top of the support.
        let p = PowerLawParams::default();
        let scale = powerlaw_scale(5.0, &p).unwrap();
        assert_abs_diff_eq!(scale * 1f64.powf(1.0 / p.q), SCALE_AT_5, epsilon = 1e-12);
    }

    #[test]
    fn cdf_examples() {
        let p = PowerLawParams::default();
        let scale = powerlaw_scale(5.0, &p).unwrap();
        assert_eq!(powerlaw_cdf(scale, 5.0, &p).unwrap(), 1.0);
        assert_eq!(powerlaw_cdf(0.0, 5.0, &p).unwrap(), 0.0);
        assert_abs_diff_eq!(
            powerlaw_cdf(scale / 2.0, 5.0, &p).unwrap(),
            0.933_032_991_536_807_4,
            epsilon = 1e-12
        );
        assert!(powerlaw_cdf(1.0, -2.0, &p).is_err());
    }

    #[test]
    fn powerlaw_mean_matches_first_moment() {
        let p = PowerLawParams::default();
        let mut rng = RngStream::new(42);
        let n = 1_000_000;
        let mean = (0..n)
            .map(|_| powerlaw_sample(5.0, &p, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        let expected = 0.213_729_593_623_576_7;
        assert!((mean - expected).abs() / expected < 0.005, "mean {mean}");
    }

    #[test]
    fn poisson_pmf_zero_at_one() {
        assert_abs_diff_eq!(poisson_pmf(0, 1.0), (-1f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            poisson_pmf(0, 1.0),
            0.367_879_441_171_442_3,
            epsilon = 1e-15
        );
        assert_eq!(poisson_pmf(0, 0.0), 1.0);
        assert_eq!(poisson_pmf(3, 0.0), 0.0);
        let total: f64 = (0..200).map(|k| poisson_pmf(k, 40.0)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn poisson_domain() {
        let mut rng = RngStream::new(0);
        assert_eq!(poisson_sample(0.0, &mut rng).unwrap(), 0);
        assert!(poisson_sample(-0.1, &mut rng).is_err());
        assert!(poisson_sample(f64::NAN, &mut rng).is_err());
        assert!(poisson_sample(f64::INFINITY, &mut rng).is_err());
    }

    fn moments(x: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = RngStream::new(seed);
        let draws: Vec<f64> = (0..n)
            .map(|_| poisson_sample(x, &mut rng).unwrap() as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn poisson_moments_at_four() {
        let (mean, var) = moments(4.0, 1_000_000, 5);
        assert!((mean - 4.0).abs() / 4.0 < 0.01, "mean {mean}");
        assert!((var - 4.0).abs() / 4.0 < 0.02, "var {var}");
    }

    #[test]
    fn poisson_both_branches_near_switch() {
        for &x in &[29.5, 30.0, 75.0, 1000.0] {
            let (mean, var) = moments(x, 200_000, 9);
            assert!((mean - x).abs() / x < 0.01, "x={x} mean {mean}");
            assert!((var - x).abs() / x < 0.03, "x={x} var {var}");
        }
    }

    #[test]
    fn rejection_branch_matches_pmf() {
        let x = 40.0;
        let n = 400_000;
        let mut rng = RngStream::new(77);
        let mut hist = vec![0usize; 120];
        for _ in 0..n {
            let k = poisson_sample(x, &mut rng).unwrap() as usize;
            if k < hist.len() {
                hist[k] += 1;
            }
        }
        for k in 25..55 {
            let p = poisson_pmf(k as u64, x);
            let emp = hist[k] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((emp - p).abs() < 5.0 * se, "k={k} emp {emp} pmf {p}");
        }
    }

    #[test]
    fn compound_zero_probability_matches_quadrature() {
        let p = PowerLawParams::default();
        let scale = powerlaw_scale(5.0, &p).unwrap();
        let oracle = quad_expected_exp_neg(scale, p.q);
        assert_abs_diff_eq!(oracle, 0.870_286_525_964_070_1, epsilon = 1e-9);
        let mut rng = RngStream::new(8);
        let n = 1_000_000;
        let zeros = (0..n)
            .filter(|_| compound_increment(5.0, &p, &mut rng).unwrap() == 0)
            .count();
        let emp = zeros as f64 / n as f64;
        assert!((emp - oracle).abs() / oracle < 0.005, "emp {emp}");
    }

    #[test]
    fn compound_mean_is_powerlaw_mean() {
        let p = PowerLawParams::default();
        let mut rng = RngStream::new(12);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| compound_increment(5.0, &p, &mut rng).unwrap() as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = p.mean_at_scale(SCALE_AT_5);
        assert!((mean - expected).abs() / expected < 0.01);
        assert!((mean - expected).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn prob_positive_converges_and_is_deterministic() {
        let p = PowerLawParams::default();
        let oracle = 1.0 - quad_expected_exp_neg(SCALE_AT_5, p.q);
        let a = prob_positive_increment(5.0, &p, 200_000, &mut RngStream::new(4)).unwrap();
        let b = prob_positive_increment(5.0, &p, 200_000, &mut RngStream::new(4)).unwrap();
        assert_eq!(a, b);
        assert!((a - oracle).abs() < 0.004, "{a} vs {oracle}");
        assert_eq!(
            prob_positive_increment(0.0, &p, 100, &mut RngStream::new(1)).unwrap(),
            0.0
        );
        assert!(prob_positive_increment(5.0, &p, 0, &mut RngStream::new(1)).is_err());
    }

    proptest! {
        #[test]
        fn scale_monotone_in_count(a in 0.0f64..500.0, d in 0.0f64..100.0, b2 in 0.0f64..3.0) {
            let p = PowerLawParams::new(0.1, 0.33, b2).unwrap();
            prop_assert!(powerlaw_scale(a + d, &p).unwrap() >= powerlaw_scale(a, &p).unwrap());
        }

        #[test]
        fn draws_stay_in_support(h in 0.0f64..200.0, seed in any::<u64>()) {
            let p = PowerLawParams::default();
            let mut rng = RngStream::new(seed);
            let scale = powerlaw_scale(h, &p).unwrap();
            for _ in 0..50 {
                let x = powerlaw_sample(h, &p, &mut rng).unwrap();
                prop_assert!(x >= 0.0 && x <= scale);
            }
        }

        #[test]
        fn cdf_is_a_cdf(z1 in -1.0f64..10.0, dz in 0.0f64..5.0, h in 0.1f64..20.0) {
            let p = PowerLawParams::default();
            let a = powerlaw_cdf(z1, h, &p).unwrap();
            let b = powerlaw_cdf(z1 + dz, h, &p).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(b >= a);
        }
    }
}
