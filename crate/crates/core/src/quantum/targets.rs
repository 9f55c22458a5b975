//! Named quantum realizations: one state family on every source, one
//! measurement family at every party.

use serde::{Deserialize, Serialize};

use super::{
    bell_state, born_distribution, coarse_grain, computational_basis_povm, rgb4_povm, rotated_state,
    tetra_joint_measurement, werner, BellKind, HilbertWiring, MergeMap, Povm, SourceState, StateVector,
};
use crate::error::{Error, Result};
use crate::topology::{Distribution, NetworkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateFamily {
    Bell { state: BellState },
    Rotated { theta: f64, family: u8 },
}

/// Serializable mirror of [`BellKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BellState {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl From<BellState> for BellKind {
    fn from(b: BellState) -> Self {
        match b {
            BellState::PhiPlus => BellKind::PhiPlus,
            BellState::PhiMinus => BellKind::PhiMinus,
            BellState::PsiPlus => BellKind::PsiPlus,
            BellState::PsiMinus => BellKind::PsiMinus,
        }
    }
}

impl From<BellKind> for BellState {
    fn from(b: BellKind) -> Self {
        match b {
            BellKind::PhiPlus => BellState::PhiPlus,
            BellKind::PhiMinus => BellState::PhiMinus,
            BellKind::PsiPlus => BellState::PsiPlus,
            BellKind::PsiMinus => BellState::PsiMinus,
        }
    }
}

impl StateFamily {
    pub fn state(&self) -> Result<StateVector> {
        match *self {
            StateFamily::Bell { state } => Ok(bell_state(state.into())),
            StateFamily::Rotated { theta, family } => rotated_state(theta, family),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasurementFamily {
    Rgb4 { u: f64 },
    Tetra { mu: f64 },
    Computational { dim: usize },
}

impl MeasurementFamily {
    pub fn povm(&self) -> Result<Povm> {
        match *self {
            MeasurementFamily::Rgb4 { u } => rgb4_povm(u),
            MeasurementFamily::Tetra { mu } => tetra_joint_measurement(mu),
            MeasurementFamily::Computational { dim } => Ok(computational_basis_povm(dim)),
        }
    }
}

/// Everything needed to compute a target distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub network: NetworkConfig,
    pub wiring: Vec<usize>,
    pub state: StateFamily,
    pub measurement: MeasurementFamily,
    /// Werner visibility applied to every source; 1 keeps the pure state.
    pub visibility: f64,
    #[serde(default)]
    pub coarse: Option<Vec<Vec<usize>>>,
}

impl Realization {
    /// Ring preset (`triangle`, `square`, `pentagon`) with its ring wiring.
    pub fn ring_preset(
        name: &str,
        state: StateFamily,
        measurement: MeasurementFamily,
        visibility: f64,
    ) -> Result<Self> {
        let outcomes = measurement.povm()?.n_outcomes();
        let network = NetworkConfig::preset(name, outcomes)
            .ok_or_else(|| Error::Config {
                location: "network".into(),
                message: format!("unknown ring preset {name:?}"),
            })??;
        Ok(Realization {
            wiring: HilbertWiring::ring(network.n_parties()).order().to_vec(),
            network,
            state,
            measurement,
            visibility,
            coarse: None,
        })
    }

    /// Triangle with `|ψ+⟩` (Werner-noised at `visibility`) on every source
    /// and the four-outcome measurement with `u = √u2` at every party.
    pub fn rgb4(u2: f64, visibility: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&u2) {
            return Err(Error::Domain(format!("u² = {u2} outside [0, 1]")));
        }
        Realization::ring_preset(
            "triangle",
            StateFamily::Bell {
                state: BellState::PsiPlus,
            },
            MeasurementFamily::Rgb4 { u: u2.sqrt() },
            visibility,
        )
    }

    /// Ring network with rotated states of `family` and tetrahedral
    /// measurements.
    pub fn rotated(name: &str, theta: f64, mu: f64, family: u8, visibility: f64) -> Result<Self> {
        Realization::ring_preset(
            name,
            StateFamily::Rotated { theta, family },
            MeasurementFamily::Tetra { mu },
            visibility,
        )
    }

    pub fn with_coarse(mut self, merges: &MergeMap) -> Self {
        self.coarse = Some(merges.maps().to_vec());
        self
    }

    /// The network the local model must reproduce: outcome counts follow the
    /// coarse-graining when there is one.
    pub fn fitted_network(&self) -> Result<NetworkConfig> {
        match &self.coarse {
            None => Ok(self.network.clone()),
            Some(maps) => self.network.with_outcomes(&MergeMap::new(maps.clone())?.new_shape()),
        }
    }

    pub fn sources(&self) -> Result<Vec<SourceState>> {
        let pure = self.state.state()?;
        let state: SourceState = if self.visibility < 1.0 {
            werner(&pure, self.visibility)?.into()
        } else if self.visibility == 1.0 {
            pure.into()
        } else {
            return Err(Error::Domain(format!("visibility {} outside [0, 1]", self.visibility)));
        };
        Ok(vec![state; self.network.n_sources()])
    }

    /// Target distribution over [`Self::fitted_network`].
    pub fn target(&self) -> Result<Distribution> {
        let povm = self.measurement.povm()?;
        let povms = vec![povm; self.network.n_parties()];
        let wiring = HilbertWiring::new(self.wiring.clone())?;
        let dist = born_distribution(&self.network, &self.sources()?, &povms, &wiring)?;
        match &self.coarse {
            None => Ok(dist),
            Some(maps) => coarse_grain(&dist, &MergeMap::new(maps.clone())?),
        }
    }
}
