use crate::error::{Error, Result};

/// Probe window `[t0, t0 + duration]` sampled at `t_m = t0 + m·τ`,
/// `m = 0..samples`, with `τ = duration / samples`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub t0: f64,
    pub duration: f64,
    pub samples: usize,
}

impl WindowSpec {
    pub fn new(t0: f64, duration: f64, samples: usize) -> Result<Self> {
        if !t0.is_finite() {
            return Err(Error::InvalidWindow(format!("t0 must be finite, got {t0}")));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidWindow(format!("duration must be positive, got {duration}")));
        }
        if samples < 2 {
            return Err(Error::InvalidWindow(format!("need at least 2 probe times, got {samples}")));
        }
        Ok(Self { t0, duration, samples })
    }

    pub fn tau(&self) -> f64 {
        self.duration / self.samples as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        self.t0 + m as f64 * self.tau()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples).map(|m| self.time(m)).collect()
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.duration
    }
}
