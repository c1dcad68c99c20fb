//! Fold summaries with Student-t confidence intervals.

use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("confidence {0} outside (0, 1)")]
    InvalidConfidence(f64),
    #[error("train and validation lists differ in length ({train} vs {val})")]
    LengthMismatch { train: usize, val: usize },
}

/// Mean, sample standard deviation and two-sided confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldSummary {
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Continued fraction for the regularized incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log(1.0 - x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided Student-t critical value: `t` with `P(|T| <= t) = confidence`
/// for `df` degrees of freedom.
pub fn t_critical(df: f64, confidence: f64) -> f64 {
    let alpha = 1.0 - confidence;
    // P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2), increasing in the argument
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if inc_beta(df / 2.0, 0.5, mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    libm::sqrt(df * (1.0 - x) / x)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (`n - 1` denominator).
pub fn sample_sd(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    libm::sqrt(ss / (values.len() - 1) as f64)
}

/// Interval `mean +/- t_{n-1} * sd / sqrt(n)` from already-summarised values.
pub fn t_interval(mean: f64, sd: f64, n: usize, confidence: f64) -> Result<FoldSummary, StatsError> {
    if n < 2 {
        return Err(StatsError::TooFewFolds(n));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::InvalidConfidence(confidence));
    }
    let half = t_critical((n - 1) as f64, confidence) * sd / libm::sqrt(n as f64);
    Ok(FoldSummary {
        mean,
        sd,
        ci_lo: mean - half,
        ci_hi: mean + half,
    })
}

pub fn fold_summary(values: &[f64], confidence: f64) -> Result<FoldSummary, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFewFolds(values.len()));
    }
    t_interval(mean(values), sample_sd(values), values.len(), confidence)
}

/// Per-fold `train - val` differences and their summary.
pub fn generalisation_gap(
    train_f1: &[f64],
    val_f1: &[f64],
    confidence: f64,
) -> Result<(Vec<f64>, FoldSummary), StatsError> {
    if train_f1.len() != val_f1.len() {
        return Err(StatsError::LengthMismatch {
            train: train_f1.len(),
            val: val_f1.len(),
        });
    }
    let gaps: Vec<f64> = train_f1.iter().zip(val_f1).map(|(t, v)| t - v).collect();
    let summary = fold_summary(&gaps, confidence)?;
    Ok((gaps, summary))
}
