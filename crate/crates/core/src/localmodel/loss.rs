use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::topology::{euclid_slices, euclidean_distance, kl_divergence, kl_slices, Distribution, KL_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `d_KL(target ‖ estimate)`.
    Kl,
    #[serde(alias = "euclid")]
    Euclidean,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Kl => "kl",
            LossKind::Euclidean => "euclidean",
        }
    }

    pub fn value(self, target: &[f64], estimate: &[f64]) -> f64 {
        match self {
            LossKind::Kl => kl_slices(target, estimate),
            LossKind::Euclidean => euclid_slices(target, estimate),
        }
    }

    /// Loss and its derivative with respect to each estimate entry.
    pub fn value_and_grad(self, target: &[f64], estimate: &[f64]) -> (f64, Vec<f64>) {
        let value = self.value(target, estimate);
        let grad = match self {
            LossKind::Kl => target
                .iter()
                .zip(estimate)
                .map(|(&p, &q)| if p > 0.0 && q > KL_CLAMP { -p / q } else { 0.0 })
                .collect(),
            LossKind::Euclidean => {
                if value > 0.0 {
                    target
                        .iter()
                        .zip(estimate)
                        .map(|(&p, &q)| (q - p) / value)
                        .collect()
                } else {
                    vec![0.0; target.len()]
                }
            }
        };
        (value, grad)
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "kl" => Ok(LossKind::Kl),
            "euclid" | "euclidean" => Ok(LossKind::Euclidean),
            other => Err(format!("unknown loss {other:?} (expected kl or euclid)")),
        }
    }
}

/// Loss with the target as first argument.
pub fn loss(target: &Distribution, estimate: &Distribution, kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::Kl => kl_divergence(target, estimate),
        LossKind::Euclidean => euclidean_distance(target, estimate),
    }
}
