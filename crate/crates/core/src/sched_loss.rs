//! Classification/regression losses and the epoch-dependent weighting
//! between them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Real};

/// Cosine-decayed classification weight `lambda_t`; the box loss receives
/// `1 - lambda_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgLossSchedule<T> {
    pub lambda_start: T,
    pub lambda_end: T,
    pub total_epochs: u32,
}

impl<T: Real> ProgLossSchedule<T> {
    pub fn new(lambda_start: T, lambda_end: T, total_epochs: u32) -> Result<Self> {
        let s = ProgLossSchedule { lambda_start, lambda_end, total_epochs };
        s.validate()?;
        Ok(s)
    }

    pub fn with_defaults(total_epochs: u32) -> Result<Self> {
        Self::new(T::lit(0.7), T::lit(0.3), total_epochs)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        if !unit(self.lambda_start) {
            return Err(Error::arg("lambda_start", format!("{} not in [0, 1]", self.lambda_start)));
        }
        if !unit(self.lambda_end) {
            return Err(Error::arg("lambda_end", format!("{} not in [0, 1]", self.lambda_end)));
        }
        if self.lambda_start < self.lambda_end {
            return Err(Error::arg("lambda_start", "must be >= lambda_end (schedule is non-increasing)"));
        }
        if self.total_epochs == 0 {
            return Err(Error::arg("total_epochs", "must be >= 1"));
        }
        Ok(())
    }
}

/// `lambda_end + (lambda_start - lambda_end) * (1 + cos(pi * t / T)) / 2`.
///
/// The endpoints are returned exactly.
pub fn lambda_at<T: Real>(schedule: &ProgLossSchedule<T>, epoch: u32) -> Result<T> {
    let total = schedule.total_epochs;
    if epoch > total {
        return Err(Error::EpochOutOfRange { epoch, total });
    }
    if epoch == 0 {
        return Ok(schedule.lambda_start);
    }
    if epoch == total {
        return Ok(schedule.lambda_end);
    }
    let frac = T::from_u32(epoch).unwrap() / T::from_u32(total).unwrap();
    let w = (T::one() + (T::PI() * frac).cos()) / T::lit(2.0);
    let span = schedule.lambda_start - schedule.lambda_end;
    // Guard against rounding pushing past either endpoint.
    Ok((schedule.lambda_end + span * w).clamp(schedule.lambda_end, schedule.lambda_start))
}

/// Binary cross-entropy on a logit, in the overflow-free form
/// `max(x, 0) - x * y + ln(1 + e^-|x|)`, with gradient `sigmoid(x) - y`.
pub fn bce_loss<T: Real>(logit: T, target: bool) -> (T, T) {
    let y = if target { T::one() } else { T::zero() };
    let loss = logit.max(T::zero()) - logit * y + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub l_cls: T,
    pub l_box: T,
    pub lambda_t: T,
    pub l_total: T,
}

impl<T: Real> LossBreakdown<T> {
    /// Multipliers for the classification and box gradients.
    pub fn weights(&self) -> (T, T) {
        (self.lambda_t, T::one() - self.lambda_t)
    }
}

pub fn total_loss<T: Real>(l_cls: T, l_box: T, schedule: &ProgLossSchedule<T>, epoch: u32) -> Result<LossBreakdown<T>> {
    if !(l_cls >= T::zero() && l_cls.is_finite()) {
        return Err(Error::arg("l_cls", format!("must be finite and >= 0, got {l_cls}")));
    }
    if !(l_box >= T::zero() && l_box.is_finite()) {
        return Err(Error::arg("l_box", format!("must be finite and >= 0, got {l_box}")));
    }
    let lambda_t = lambda_at(schedule, epoch)?;
    let l_total = lambda_t * l_cls + (T::one() - lambda_t) * l_box;
    Ok(LossBreakdown { l_cls, l_box, lambda_t, l_total })
}
