//! Three-class focal loss with analytic gradient, as a reference kernel for
//! trainers and tests.

use thiserror::Error;

use crate::manifest::FractureClass;

/// Probabilities are floored here inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FocalError {
    #[error("logits must be finite")]
    NonFiniteInput,
    #[error("class {0} is not trainable")]
    NotTrainable(FractureClass),
    #[error("gamma must be >= 0 and label smoothing in [0, 1)")]
    InvalidConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalConfig {
    pub gamma: f64,
    pub label_smoothing: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            label_smoothing: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalOutput {
    pub loss: f64,
    /// Derivative of the loss with respect to each logit.
    pub grad: [f64; 3],
}

/// `loss = -sum_c q_c (1 - p_c)^gamma log p_c` with `p = softmax(logits)` and
/// `q = (1 - s) onehot + s / 3`. No alpha weighting.
pub fn focal_loss(
    logits: [f64; 3],
    true_class: FractureClass,
    cfg: &FocalConfig,
) -> Result<FocalOutput, FocalError> {
    if !(cfg.gamma >= 0.0) || !(0.0..1.0).contains(&cfg.label_smoothing) {
        return Err(FocalError::InvalidConfig);
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(FocalError::NonFiniteInput);
    }
    let target = true_class
        .trainable_index()
        .ok_or(FocalError::NotTrainable(true_class))?;

    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| libm::exp(z - max));
    let sum: f64 = exps.iter().sum();
    let log_sum = libm::log(sum);
    let p = exps.map(|e| e / sum);
    let s = cfg.label_smoothing;
    let q: [f64; 3] = core::array::from_fn(|c| {
        s / 3.0 + if c == target { 1.0 - s } else { 0.0 }
    });
    let ln_floor = libm::log(PROB_FLOOR);
    let g = cfg.gamma;

    let mut loss = 0.0;
    // w_c = q_c * p_c * d/dp_c[(1 - p_c)^g log p_c]
    let mut w = [0.0; 3];
    for c in 0..3 {
        // complement summed from the other classes keeps precision near p = 1
        let one_minus: f64 = (0..3).filter(|&j| j != c).map(|j| p[j]).sum();
        let raw_log = logits[c] - max - log_sum;
        let floored = raw_log < ln_floor;
        let log_p = if floored { ln_floor } else { raw_log };
        let focus = libm::pow(one_minus, g);
        loss -= q[c] * focus * log_p;

        let decay = if g == 0.0 || one_minus == 0.0 {
            0.0
        } else {
            -g * libm::pow(one_minus, g - 1.0) * p[c] * log_p
        };
        let direct = if floored { 0.0 } else { focus };
        w[c] = q[c] * (decay + direct);
    }
    let w_sum: f64 = w.iter().sum();
    let grad: [f64; 3] = core::array::from_fn(|j| -(w[j] - p[j] * w_sum));
    Ok(FocalOutput { loss, grad })
}
