//! Small dense quantum objects, the state and measurement families used in
//! the experiments, and the Born-rule evaluator for arbitrary networks.

mod born;
mod families;
pub mod raw;
pub mod targets;

pub use born::{born_distribution, coarse_grain, MergeMap};
pub use targets::{BellState, MeasurementFamily, Realization, StateFamily};
pub use families::{
    bell_state, computational_basis_povm, projective_povm, rgb4_povm, rotated_state,
    tetra_joint_measurement, tetrahedron_vectors, werner, BellKind,
};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance for the norm, Hermiticity, trace, positivity and completeness
/// checks of constructed objects.
pub const QUANTUM_TOL: f64 = 1e-10;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub(crate) fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Pure state over one or more particles.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: CVector,
    dims: Vec<usize>,
}

impl StateVector {
    pub fn new(amplitudes: Vec<Complex64>, dims: Vec<usize>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || amplitudes.len() != expected {
            return Err(Error::Dimension(format!(
                "{} amplitudes for particle dims {dims:?}",
                amplitudes.len()
            )));
        }
        let amplitudes = CVector::from_vec(amplitudes);
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > QUANTUM_TOL {
            return Err(Error::Quantum(format!("state norm {norm} is not 1")));
        }
        Ok(StateVector { amplitudes, dims })
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn projector(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            matrix: self.projector(),
            dims: self.dims.clone(),
        }
    }
}

/// Mixed state: Hermitian, positive semidefinite, unit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
    dims: Vec<usize>,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix, dims: Vec<usize>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || matrix.nrows() != expected || matrix.ncols() != expected {
            return Err(Error::Dimension(format!(
                "{}x{} matrix for particle dims {dims:?}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        check_psd(&matrix, "density matrix")?;
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > QUANTUM_TOL || tr.im.abs() > QUANTUM_TOL {
            return Err(Error::Quantum(format!("density matrix trace {tr} is not 1")));
        }
        Ok(DensityMatrix { matrix, dims })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.matrix)
    }
}

/// What a source distributes.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

impl SourceState {
    pub fn dims(&self) -> &[usize] {
        match self {
            SourceState::Pure(s) => s.dims(),
            SourceState::Mixed(r) => r.dims(),
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        match self {
            SourceState::Pure(s) => s.to_density(),
            SourceState::Mixed(r) => r.clone(),
        }
    }
}

impl From<StateVector> for SourceState {
    fn from(s: StateVector) -> Self {
        SourceState::Pure(s)
    }
}

impl From<DensityMatrix> for SourceState {
    fn from(r: DensityMatrix) -> Self {
        SourceState::Mixed(r)
    }
}

/// Measurement effects `M_a ⪰ 0` summing to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    effects: Vec<CMatrix>,
    dim: usize,
}

impl Povm {
    pub fn new(effects: Vec<CMatrix>) -> Result<Self> {
        let dim = effects
            .first()
            .ok_or_else(|| Error::Quantum("POVM has no effects".into()))?
            .nrows();
        let mut sum = CMatrix::zeros(dim, dim);
        for (a, e) in effects.iter().enumerate() {
            if e.nrows() != dim || e.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "effect {a} is {}x{}, expected {dim}x{dim}",
                    e.nrows(),
                    e.ncols()
                )));
            }
            check_psd(e, &format!("effect {a}"))?;
            sum += e;
        }
        let dev = (sum - CMatrix::identity(dim, dim)).camax();
        if dev > QUANTUM_TOL {
            return Err(Error::Quantum(format!(
                "effects sum to identity only within {dev:e}"
            )));
        }
        Ok(Povm { effects, dim })
    }

    pub fn effects(&self) -> &[CMatrix] {
        &self.effects
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_outcomes(&self) -> usize {
        self.effects.len()
    }
}

/// Permutation matching source particles to measurement Hilbert spaces:
/// particle `order[l]` (sources in network order, particles in each state's
/// own order) occupies the `l`-th measured Hilbert space (parties in network
/// order, slots in each party's source order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertWiring {
    order: Vec<usize>,
}

impl HilbertWiring {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &o in &order {
            if o >= order.len() || std::mem::replace(&mut seen[o], true) {
                return Err(Error::Wiring(format!(
                    "{order:?} is not a permutation of 0..{}",
                    order.len()
                )));
            }
        }
        Ok(HilbertWiring { order })
    }

    pub fn identity(n: usize) -> Self {
        HilbertWiring {
            order: (0..n).collect(),
        }
    }

    /// Wiring for [`crate::topology::NetworkConfig::ring`] with one
    /// two-particle state per source: party `i` measures the second particle
    /// of the source it shares with party `i - 1`, then the first particle of
    /// its own source. For the triangle this is `[5, 0, 1, 2, 3, 4]`.
    pub fn ring(n: usize) -> Self {
        HilbertWiring {
            order: (0..n).flat_map(|i| [(2 * i + 2 * n - 1) % (2 * n), 2 * i]).collect(),
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn inverse(&self) -> HilbertWiring {
        let mut inv = vec![0; self.order.len()];
        for (l, &p) in self.order.iter().enumerate() {
            inv[p] = l;
        }
        HilbertWiring { order: inv }
    }

    /// Parses `"5,0,1,2,3,4"`.
    pub fn parse(text: &str) -> Result<Self> {
        let order = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Wiring(format!("not an index: {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        HilbertWiring::new(order)
    }
}

pub(crate) fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

fn check_psd(m: &CMatrix, what: &str) -> Result<()> {
    let herm = (m - m.adjoint()).camax();
    if herm > QUANTUM_TOL {
        return Err(Error::Quantum(format!("{what} is not Hermitian ({herm:e})")));
    }
    let min = hermitian_eigenvalues(m).first().copied().unwrap_or(0.0);
    if min < -QUANTUM_TOL {
        return Err(Error::Quantum(format!(
            "{what} has negative eigenvalue {min:e}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wiring_validation() {
        assert!(HilbertWiring::new(vec![5, 0, 1, 2, 3, 4]).is_ok());
        assert!(HilbertWiring::new(vec![0, 0, 1]).is_err());
        assert!(HilbertWiring::new(vec![0, 3, 1]).is_err());
        assert!(HilbertWiring::parse("5, 0,1,2,3,4").is_ok());
        assert!(HilbertWiring::parse("5,x").is_err());
        let w = HilbertWiring::new(vec![2, 0, 3, 1]).unwrap();
        let inv = w.inverse();
        for l in 0..4 {
            assert_eq!(inv.order()[w.order()[l]], l);
        }
    }

    #[test]
    fn ring_wiring_is_a_permutation() {
        for n in 2..7 {
            let w = HilbertWiring::ring(n);
            assert!(HilbertWiring::new(w.order().to_vec()).is_ok());
        }
        assert_eq!(HilbertWiring::ring(3).order(), &[5, 0, 1, 2, 3, 4]);
    }

    #[test]
    fn density_validation() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = c(1.2, 0.0);
        m[(1, 1)] = c(-0.2, 0.0);
        assert!(DensityMatrix::new(m, vec![2]).is_err());
        let mut h = CMatrix::zeros(2, 2);
        h[(0, 0)] = c(0.5, 0.0);
        h[(1, 1)] = c(0.5, 0.0);
        h[(0, 1)] = c(0.0, 0.1);
        h[(1, 0)] = c(0.0, 0.1);
        assert!(DensityMatrix::new(h, vec![2]).is_err());
    }

    #[test]
    fn povm_validation() {
        let id = CMatrix::identity(2, 2);
        assert!(Povm::new(vec![id.clone()]).is_ok());
        assert!(Povm::new(vec![id.clone(), id.clone()]).is_err());
        assert!(Povm::new(vec![]).is_err());
        assert!(Povm::new(vec![CMatrix::identity(3, 3) * c(0.5, 0.0), id * c(0.5, 0.0)]).is_err());
    }
}
