use crate::error::{Error, Result};

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: usize) -> Result<Self> {
        if !(lr_max >= lr_min && lr_min >= 0.0) || total_steps == 0 {
            return Err(Error::Parameter(format!(
                "invalid schedule lr_max={lr_max} lr_min={lr_min} total_steps={total_steps}"
            )));
        }
        Ok(Self {
            lr_max,
            lr_min,
            total_steps,
        })
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Parameter(format!(
                "step {step} beyond schedule length {}",
                self.total_steps
            )));
        }
        let phase = std::f64::consts::PI * step as f64 / self.total_steps as f64;
        Ok(self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + phase.cos()))
    }
}
