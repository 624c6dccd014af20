//! Adversarial and supervision losses, each with its gradient with respect
//! to the scores or time estimates it consumes.
//!
//! Scores are clamped to `[EPS, 1 - EPS]` before taking logs; gradients are
//! evaluated at the clamped value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPS: f64 = 1e-7;

fn clamp(s: f64) -> f64 {
    s.clamp(EPS, 1.0 - EPS)
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

/// Discriminator loss `-mean(log real) - mean(log(1 - fake))`. An empty
/// side contributes nothing.
pub fn d_loss(real: &[f64], fake: &[f64]) -> f64 {
    -mean(real.iter().map(|&s| clamp(s).ln())) - mean(fake.iter().map(|&s| (1.0 - clamp(s)).ln()))
}

/// Gradients of [`d_loss`] with respect to each real and fake score.
pub fn d_loss_grads(real: &[f64], fake: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nr = real.len() as f64;
    let nf = fake.len() as f64;
    (
        real.iter().map(|&s| -1.0 / (nr * clamp(s))).collect(),
        fake.iter().map(|&s| 1.0 / (nf * (1.0 - clamp(s)))).collect(),
    )
}

/// Non-saturating generator loss `-mean(log fake)`.
pub fn g_adv_loss(fake: &[f64]) -> f64 {
    -mean(fake.iter().map(|&s| clamp(s).ln()))
}

pub fn g_adv_loss_grads(fake: &[f64]) -> Vec<f64> {
    let n = fake.len() as f64;
    fake.iter().map(|&s| -1.0 / (n * clamp(s))).collect()
}

/// One (estimate, label) pair for the supervision loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlPair {
    pub t_hat: f64,
    pub t: f64,
    pub delta: u8,
}

impl SlPair {
    pub fn new(t_hat: f64, t: f64, delta: u8) -> Self {
        SlPair { t_hat, t, delta }
    }
}

/// Mean absolute error over uncensored pairs plus mean hinge
/// `max(0, t - t_hat)` over censored pairs, each averaged over its own
/// subpopulation.
pub fn sl_loss(pairs: &[SlPair]) -> f64 {
    let (events, censored): (Vec<&SlPair>, Vec<&SlPair>) = pairs.iter().partition(|p| p.delta == 0);
    mean(events.iter().map(|p| (p.t_hat - p.t).abs())) + mean(censored.iter().map(|p| (p.t - p.t_hat).max(0.0)))
}

/// Subgradient of [`sl_loss`] with respect to each `t_hat` (zero at kinks).
pub fn sl_loss_grads(pairs: &[SlPair]) -> Vec<f64> {
    let n_events = pairs.iter().filter(|p| p.delta == 0).count() as f64;
    let n_censored = pairs.len() as f64 - n_events;
    pairs
        .iter()
        .map(|p| {
            if p.delta == 0 {
                let diff = p.t_hat - p.t;
                if diff > 0.0 {
                    1.0 / n_events
                } else if diff < 0.0 {
                    -1.0 / n_events
                } else {
                    0.0
                }
            } else if p.t > p.t_hat {
                -1.0 / n_censored
            } else {
                0.0
            }
        })
        .collect()
}

/// Weights of the generator's adversarial and supervision terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_sl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_adv: 1.0,
            lambda_sl: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_adv: f64, lambda_sl: f64) -> Result<Self> {
        let w = LossWeights { lambda_adv, lambda_sl };
        w.validate()?;
        Ok(w)
    }

    /// Supervision only: the non-adversarial baseline.
    pub fn supervised_only() -> Self {
        LossWeights {
            lambda_adv: 0.0,
            lambda_sl: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_adv >= 0.0 && self.lambda_sl >= 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.lambda_adv == 0.0 && self.lambda_sl == 0.0 {
            return Err(Error::Config("loss weights cannot both be zero".into()));
        }
        Ok(())
    }

    pub fn is_adversarial(&self) -> bool {
        self.lambda_adv > 0.0
    }
}

pub fn g_total_loss(adv: f64, sl: f64, w: LossWeights) -> f64 {
    w.lambda_adv * adv + w.lambda_sl * sl
}
