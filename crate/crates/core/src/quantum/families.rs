use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use num_complex::Complex64;

use super::{c, CMatrix, CVector, DensityMatrix, Povm, StateVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BellKind {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl std::str::FromStr for BellKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "phi_plus" | "phi+" => Ok(BellKind::PhiPlus),
            "phi_minus" | "phi-" => Ok(BellKind::PhiMinus),
            "psi_plus" | "psi+" => Ok(BellKind::PsiPlus),
            "psi_minus" | "psi-" => Ok(BellKind::PsiMinus),
            other => Err(format!("unknown Bell state {other:?}")),
        }
    }
}

/// Two-qubit Bell state in the basis `|00⟩, |01⟩, |10⟩, |11⟩`.
pub fn bell_state(kind: BellKind) -> StateVector {
    let h = FRAC_1_SQRT_2;
    let amps = match kind {
        BellKind::PhiPlus => [h, 0.0, 0.0, h],
        BellKind::PhiMinus => [h, 0.0, 0.0, -h],
        BellKind::PsiPlus => [0.0, h, h, 0.0],
        BellKind::PsiMinus => [0.0, h, -h, 0.0],
    };
    StateVector::new(amps.iter().map(|&a| c(a, 0.0)).collect(), vec![2, 2]).expect("normalized")
}

/// `cos(θ/2)|φ+⟩ + i sin(θ/2)|ψ+⟩` (family 1) or
/// `cos(θ/2)|φ-⟩ + i sin(θ/2)|ψ-⟩` (family 2), `θ ∈ [0, π]`.
pub fn rotated_state(theta: f64, family: u8) -> Result<StateVector> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::Domain(format!("theta = {theta} outside [0, π]")));
    }
    let (even, odd) = match family {
        1 => (BellKind::PhiPlus, BellKind::PsiPlus),
        2 => (BellKind::PhiMinus, BellKind::PsiMinus),
        f => return Err(Error::Domain(format!("unknown rotated-state family {f}"))),
    };
    let (s, co) = (theta / 2.0).sin_cos();
    let amps = bell_state(even).amplitudes() * c(co, 0.0) + bell_state(odd).amplitudes() * c(0.0, s);
    StateVector::new(amps.iter().copied().collect(), vec![2, 2])
}

/// `V |ψ⟩⟨ψ| + (1 - V) 1/4` for a two-qubit `ψ`.
pub fn werner(pure: &StateVector, visibility: f64) -> Result<DensityMatrix> {
    if pure.dims() != [2, 2] {
        return Err(Error::Dimension(format!(
            "Werner state needs two qubits, got dims {:?}",
            pure.dims()
        )));
    }
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::Domain(format!("visibility {visibility} outside [0, 1]")));
    }
    let m = pure.projector() * c(visibility, 0.0)
        + CMatrix::identity(4, 4) * c((1.0 - visibility) / 4.0, 0.0);
    DensityMatrix::new(m, vec![2, 2])
}

/// Rank-one projective measurement onto the given orthonormal vectors.
pub fn projective_povm(vectors: &[CVector]) -> Result<Povm> {
    Povm::new(vectors.iter().map(|v| v * v.adjoint()).collect())
}

/// Computational-basis measurement on a `dim`-dimensional space.
pub fn computational_basis_povm(dim: usize) -> Povm {
    let vectors: Vec<CVector> = (0..dim)
        .map(|i| {
            let mut v = CVector::zeros(dim);
            v[i] = c(1.0, 0.0);
            v
        })
        .collect();
    projective_povm(&vectors).expect("orthonormal basis")
}

/// Two-qubit measurement with eigenvectors
/// `|00⟩, u|01⟩ + v|10⟩, v|01⟩ - u|10⟩, |11⟩`, `v = sqrt(1 - u²)`.
pub fn rgb4_povm(u: f64) -> Result<Povm> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("u = {u} outside [0, 1]")));
    }
    let v = (1.0 - u * u).max(0.0).sqrt();
    let real = |a: [f64; 4]| CVector::from_iterator(4, a.iter().map(|&x| c(x, 0.0)));
    projective_povm(&[
        real([1.0, 0.0, 0.0, 0.0]),
        real([0.0, u, v, 0.0]),
        real([0.0, v, -u, 0.0]),
        real([0.0, 0.0, 0.0, 1.0]),
    ])
}

/// Bloch vectors of the regular tetrahedron used by the joint measurement.
pub fn tetrahedron_vectors() -> [[f64; 3]; 4] {
    let s = 1.0 / 3f64.sqrt();
    [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]]
}

/// +1 eigenstate of `m·σ` with `⟨0|m⟩` real and nonnegative.
fn bloch_ket(m: [f64; 3]) -> [Complex64; 2] {
    let [x, y, z] = m;
    if (1.0 + z).abs() < 1e-15 {
        return [c(0.0, 0.0), c(1.0, 0.0)];
    }
    let a = ((1.0 + z) / 2.0).sqrt();
    let b = c(x, y) / (2.0 * (1.0 + z)).sqrt();
    [c(a, 0.0), b]
}

fn kron2(a: [Complex64; 2], b: [Complex64; 2]) -> CVector {
    CVector::from_vec(vec![a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]])
}

/// Joint measurement with tetrahedral symmetry,
/// `|Φ_b⟩ = (√3 + e^{iμ})/(2√2) |m_b, -m_b⟩ + (√3 - e^{iμ})/(2√2) |-m_b, m_b⟩`,
/// `μ ∈ [0, π/2]`. `μ = 0` is the elegant joint measurement, `μ = π/2` a
/// locally rotated Bell-state measurement.
pub fn tetra_joint_measurement(mu: f64) -> Result<Povm> {
    if !(0.0..=FRAC_PI_2).contains(&mu) {
        return Err(Error::Domain(format!("mu = {mu} outside [0, π/2]")));
    }
    let phase = Complex64::from_polar(1.0, mu);
    let norm = 2.0 * 2f64.sqrt();
    let plus = (c(3f64.sqrt(), 0.0) + phase) / norm;
    let minus = (c(3f64.sqrt(), 0.0) - phase) / norm;
    let vectors: Vec<CVector> = tetrahedron_vectors()
        .iter()
        .map(|&m| {
            let up = bloch_ket(m);
            let down = bloch_ket([-m[0], -m[1], -m[2]]);
            kron2(up, down) * plus + kron2(down, up) * minus
        })
        .collect();
    projective_povm(&vectors)
}
