//! Correlation, distribution and publication-event statistics, and the
//! per-level/per-year reports built from them.

mod report;

use thiserror::Error;

pub use report::{
    auc_report, build_reports, distribution_report, trend_report, AucCell, DistributionReport,
    Estimate, ReportConfig, Reports, TrendCell, TrendReport, YearSummary,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sample is empty")]
    EmptySample,
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("invalid report config: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Sample Pearson correlation. `None` when either side has zero variance or
/// fewer than two points.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len(), "pearson needs equal lengths");
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// `s1` on author-aligned lists, `s2` on independently sorted lists.
pub fn s1_s2(truth: &[f64], predicted: &[f64]) -> (Option<f64>, Option<f64>) {
    let s1 = pearson(truth, predicted);
    let mut a = truth.to_vec();
    let mut b = predicted.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    (s1, pearson(&a, &b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Complementary Kolmogorov distribution `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Jacobi theta form of the CDF; the alternating series converges
        // poorly for small arguments.
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda
            * (1..=100)
                .map(|k: i32| (-(2 * k - 1).pow(2) as f64 * c).exp())
                .sum::<f64>();
        1.0 - cdf
    } else {
        2.0 * (1..=100)
            .map(|k: i32| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * f64::from(k * k) * lambda * lambda).exp()
            })
            .sum::<f64>()
    };
    p.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value at
/// effective size `n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let v = a[i].min(b[j]);
        while i < na && a[i] == v {
            i += 1;
        }
        while j < nb && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(ne.sqrt() * d),
        n_a: na,
        n_b: nb,
    })
}

/// Tie-aware accuracy of thresholded probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AucCounts {
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
    pub m: usize,
}

impl AucCounts {
    pub fn auc(&self) -> Option<f64> {
        (self.m > 0)
            .then(|| (self.m1 as f64 + self.m2 as f64 + 0.5 * self.m3 as f64) / self.m as f64)
    }
}

/// Probability rounded to six decimals, the resolution used for ties at 0.5.
pub fn round_probability(p: f64) -> f64 {
    (p * 1e6).round() / 1e6
}

/// `m1`: published with `p > 0.5`; `m2`: not published with `p < 0.5`;
/// `m3`: `p == 0.5` after rounding.
pub fn auc_counts(published: &[bool], probs: &[f64]) -> Result<AucCounts, EvalError> {
    if published.len() != probs.len() {
        return Err(EvalError::Length(published.len(), probs.len()));
    }
    let mut c = AucCounts {
        m1: 0,
        m2: 0,
        m3: 0,
        m: probs.len(),
    };
    for (&pub_, &p) in published.iter().zip(probs) {
        if !p.is_finite() {
            return Err(EvalError::NonFinite);
        }
        let p = round_probability(p);
        if p == 0.5 {
            c.m3 += 1;
        } else if pub_ && p > 0.5 {
            c.m1 += 1;
        } else if !pub_ && p < 0.5 {
            c.m2 += 1;
        }
    }
    Ok(c)
}

/// `(m1 + m2 + m3 / 2) / m`: accuracy with ties at 0.5, not the ROC area.
pub fn auc_paper(published: &[bool], probs: &[f64]) -> Result<f64, EvalError> {
    auc_counts(published, probs)?
        .auc()
        .ok_or(EvalError::EmptySample)
}
