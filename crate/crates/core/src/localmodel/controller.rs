use serde::{Deserialize, Serialize};

use super::loss::LossKind;

pub const DEFAULT_BIAS: f64 = 4.0;
pub const BIAS_MIN: f64 = 2.0;
pub const DEFAULT_BIAS_MAX: f64 = 10.0;
pub const DEFAULT_N_MIN: usize = 1_000;
pub const DEFAULT_N_MAX: usize = 10_000_000;
pub const DEFAULT_STAGNATION_WINDOW: usize = 100;

/// Chooses the number of hidden-variable samples for the next iteration so
/// that the sampling error stays a factor `B` below the current loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingController {
    pub bias: f64,
    pub bias_max: f64,
    pub loss_kind: LossKind,
    pub n_outcomes: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub stagnation_window: usize,
}

impl SamplingController {
    pub fn new(loss_kind: LossKind, n_outcomes: usize) -> Self {
        SamplingController {
            bias: DEFAULT_BIAS,
            bias_max: DEFAULT_BIAS_MAX,
            loss_kind,
            n_outcomes,
            n_min: DEFAULT_N_MIN,
            n_max: DEFAULT_N_MAX,
            stagnation_window: DEFAULT_STAGNATION_WINDOW,
        }
    }

    /// `⌈B N_o / L⌉` for KL, `⌈(B / L)²⌉` for the Euclidean distance,
    /// clamped to `[n_min, n_max]`. A loss that is not positive is below
    /// resolution and gets `n_max`.
    pub fn next_sample_count(&self, last_loss: f64) -> usize {
        if !(last_loss > 0.0) {
            return self.n_max;
        }
        let raw = match self.loss_kind {
            LossKind::Kl => self.bias * self.n_outcomes as f64 / last_loss,
            LossKind::Euclidean => (self.bias / last_loss).powi(2),
        };
        let raw = raw.ceil();
        if raw >= self.n_max as f64 {
            self.n_max
        } else {
            (raw as usize).max(self.n_min)
        }
    }

    /// Increments `B` (up to `bias_max`) once `iterations_since_improvement`
    /// exceeds the stagnation window. Returns whether the window was
    /// exceeded, in which case the caller restarts its stagnation count.
    pub fn bump_bias(&mut self, iterations_since_improvement: usize) -> bool {
        if iterations_since_improvement < self.stagnation_window {
            return false;
        }
        self.bias = (self.bias + 1.0).min(self.bias_max);
        true
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.bias >= BIAS_MIN
            && self.bias <= self.bias_max
            && self.n_min >= 1
            && self.n_min <= self.n_max
            && self.n_outcomes >= 1
            && self.stagnation_window >= 1;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Domain(format!(
                "invalid sampling controller: B = {} (max {}), N in [{}, {}], window {}",
                self.bias, self.bias_max, self.n_min, self.n_max, self.stagnation_window
            )))
        }
    }
}
