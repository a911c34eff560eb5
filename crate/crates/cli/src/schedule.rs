//! Learning-rate schedule: linear warmup into a cosine decay.

use wpft_core::error::{Error, Result};

/// Learning rate at `step`: a linear ramp from 0 to `base_lr` over
/// `warmup_steps`, then cosine decay toward 0 over the remaining steps.
pub fn cosine_warmup_lr(
    step: usize,
    total_steps: usize,
    warmup_steps: usize,
    base_lr: f64,
) -> Result<f64> {
    if total_steps == 0 || step >= total_steps {
        return Err(Error::config(format!(
            "schedule step {step} outside 0..{total_steps}"
        )));
    }
    if warmup_steps >= total_steps {
        return Err(Error::config(format!(
            "warmup {warmup_steps} must be shorter than the run ({total_steps} steps)"
        )));
    }
    if !(base_lr > 0.0) {
        return Err(Error::config("base learning rate must be positive"));
    }
    if step < warmup_steps {
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}
