//! Learning-rate schedule and early stopping.

/// Triangular cycle: `base` at multiples of `2 * half_period`, `max` halfway.
pub fn cyclic_lr(iteration: usize, base: f64, max: f64, half_period: usize) -> f64 {
    let half = half_period.max(1);
    let pos = iteration % (2 * half);
    let frac = if pos <= half {
        pos as f64 / half as f64
    } else {
        (2 * half - pos) as f64 / half as f64
    };
    base + (max - base) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counted in iterations since the best validation check.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_iteration: Option<usize>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_iteration: None,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_iteration(&self) -> Option<usize> {
        self.best_iteration
    }

    pub fn observe(&mut self, iteration: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best || self.best_iteration.is_none() {
            self.best = val_loss;
            self.best_iteration = Some(iteration);
            return StopDecision::Improved;
        }
        let since = iteration - self.best_iteration.unwrap_or(0);
        if since >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}
