//! Masked two-term depth objective.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the coarse term.
    pub alpha: f64,
    /// Weight of the refined term.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.3, beta: 0.7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::config(format!(
                "loss weights alpha={} beta={} must be finite and non-negative",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Tape handle of a masked MSE plus its bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct MaskedMse {
    pub value: Var,
    pub valid: usize,
    /// No pixel had `gt > 0`; `value` is 0.
    pub degenerate: bool,
}

/// Mean of `(pred - gt)^2` over pixels with `gt > 0`.
pub fn masked_mse(tape: &mut Tape, pred: Var, gt: &Tensor) -> Result<MaskedMse> {
    if tape.shape(pred) != gt.shape() {
        return Err(Error::dim("masked_mse", tape.shape(pred), gt.shape()));
    }
    let mask = crate::data::availability_mask(gt);
    let valid = mask.data().iter().filter(|&&m| m > 0.0).count();
    let g = tape.constant(gt.clone());
    let m = tape.constant(mask);
    let diff = tape.sub(pred, g)?;
    let diff = tape.mul(diff, m)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    let value = tape.scale(total, 1.0 / valid.max(1) as f64)?;
    Ok(MaskedMse {
        value,
        valid,
        degenerate: valid == 0,
    })
}

/// Plain-value counterpart of [`masked_mse`]: `(mse, degenerate)`.
pub fn masked_mse_value(pred: &Tensor, gt: &Tensor) -> Result<(f64, bool)> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim("masked_mse", pred.shape(), gt.shape()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g > 0.0 {
            sum += (p - g) * (p - g);
            n += 1;
        }
    }
    Ok(if n == 0 { (0.0, true) } else { (sum / n as f64, false) })
}

#[derive(Debug, Clone, Copy)]
pub struct DepthLoss {
    pub loss: Var,
    pub coarse: MaskedMse,
    pub refined: MaskedMse,
}

/// `alpha * masked_mse(coarse) + beta * masked_mse(refined)`.
pub fn depth_loss(tape: &mut Tape, coarse: Var, refined: Var, gt: &Tensor, cfg: &LossConfig) -> Result<DepthLoss> {
    cfg.validate()?;
    let c = masked_mse(tape, coarse, gt)?;
    let r = masked_mse(tape, refined, gt)?;
    let a = tape.scale(c.value, cfg.alpha)?;
    let b = tape.scale(r.value, cfg.beta)?;
    let loss = tape.add(a, b)?;
    Ok(DepthLoss {
        loss,
        coarse: c,
        refined: r,
    })
}
