/// Linear warmup to a constant learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
}

impl WarmupSchedule {
    /// Warmup covers the first `ratio` fraction of `total_steps`.
    pub fn from_ratio(base_lr: f64, ratio: f64, total_steps: usize) -> Self {
        Self {
            base_lr,
            warmup_steps: (ratio * total_steps as f64).ceil() as usize,
        }
    }

    /// Learning rate for the zero-based `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.base_lr;
        }
        self.base_lr * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramps_then_holds() {
        let s = WarmupSchedule::from_ratio(1.0, 0.05, 100);
        assert_eq!(s.warmup_steps, 5);
        assert!((s.lr_at(0) - 0.2).abs() < 1e-15);
        assert_eq!(s.lr_at(4), 1.0);
        assert_eq!(s.lr_at(99), 1.0);
        assert_eq!(WarmupSchedule::from_ratio(0.5, 0.0, 10).lr_at(0), 0.5);
    }
}
