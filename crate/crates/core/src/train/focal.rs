use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FocalConfig {
    /// Weight of the positive class; negatives receive `1 − alpha`.
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            alpha: 0.3,
            gamma: 2.0,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "focal alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "focal gamma must be a finite value >= 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Focal loss `−α_t (1 − p_t)^γ ln p_t` and its derivative with respect to p.
pub fn focal_loss(p: f64, y: Label, cfg: &FocalConfig) -> (f64, f64) {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let (pt, alpha_t, sign) = if y.is_positive() {
        (p, cfg.alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - cfg.alpha, -1.0)
    };
    let q = 1.0 - pt;
    let log_pt = pt.ln();
    let modulator = q.powf(cfg.gamma);
    let loss = -alpha_t * modulator * log_pt;
    let dmod = if cfg.gamma == 0.0 {
        0.0
    } else {
        cfg.gamma * q.powf(cfg.gamma - 1.0)
    };
    let dl_dpt = alpha_t * (dmod * log_pt - modulator / pt);
    (loss, sign * dl_dpt)
}
