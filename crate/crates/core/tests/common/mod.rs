//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CM = DMatrix<Complex64>;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

/// Explicit permutation matrix sending the source-order basis (particles
/// enumerated source by source) to the measurement-order basis in which slot
/// `l` holds particle `order[l]`.
pub fn permutation_matrix(particle_dims: &[usize], order: &[usize]) -> CM {
    let total: usize = particle_dims.iter().product();
    let new_dims: Vec<usize> = order.iter().map(|&p| particle_dims[p]).collect();
    let mut p = CM::from_element(total, total, zero());
    for old in 0..total {
        // digits of `old` in source order, most significant first
        let mut digits = vec![0; particle_dims.len()];
        let mut rem = old;
        for k in (0..particle_dims.len()).rev() {
            digits[k] = rem % particle_dims[k];
            rem /= particle_dims[k];
        }
        let mut new = 0;
        for (l, &part) in order.iter().enumerate() {
            new = new * new_dims[l] + digits[part];
        }
        p[(new, old)] = one();
    }
    p
}

fn all_tuples(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in shape {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..n).map(move |a| {
                    let mut t = t.clone();
                    t.push(a);
                    t
                })
            })
            .collect();
    }
    out
}

fn full_effect(povms: &[Vec<CM>], tuple: &[usize]) -> CM {
    let mut m = CM::from_element(1, 1, one());
    for (effects, &a) in povms.iter().zip(tuple) {
        m = m.kronecker(&effects[a]);
    }
    m
}

/// `⟨PΨ| ⊗ M_a |PΨ⟩` for every outcome tuple, row-major.
pub fn brute_force_pure(
    states: &[(Vec<Complex64>, Vec<usize>)],
    povms: &[Vec<CM>],
    order: &[usize],
) -> Vec<f64> {
    let mut psi = DVector::from_element(1, one());
    let mut dims = Vec::new();
    for (amps, d) in states {
        psi = psi.kronecker(&DVector::from_vec(amps.clone()));
        dims.extend_from_slice(d);
    }
    let psi = permutation_matrix(&dims, order) * psi;
    let shape: Vec<usize> = povms.iter().map(Vec::len).collect();
    all_tuples(&shape)
        .iter()
        .map(|t| (psi.adjoint() * full_effect(povms, t) * &psi)[(0, 0)].re)
        .collect()
}

/// `Tr[P ρ Pᵀ ⊗ M_a]` for every outcome tuple, row-major.
pub fn brute_force_mixed(states: &[(CM, Vec<usize>)], povms: &[Vec<CM>], order: &[usize]) -> Vec<f64> {
    let mut rho = CM::from_element(1, 1, one());
    let mut dims = Vec::new();
    for (m, d) in states {
        rho = rho.kronecker(m);
        dims.extend_from_slice(d);
    }
    let p = permutation_matrix(&dims, order);
    let rho = &p * rho * p.transpose();
    let shape: Vec<usize> = povms.iter().map(Vec::len).collect();
    all_tuples(&shape)
        .iter()
        .map(|t| (&rho * full_effect(povms, t)).trace().re)
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
