//! Born-rule evaluation `p(a_1..a_n) = ⟨Ψ| ⊗_i M_{a_i} |Ψ⟩` over a network,
//! with the source particles permuted onto the parties' Hilbert spaces.

use num_complex::Complex64;

use super::{DensityMatrix, HilbertWiring, Povm, SourceState};
use crate::error::{Error, Result};
use crate::topology::{Distribution, NetworkConfig, OutcomeIndexer};

/// Probabilities this far below zero are floating-point noise and clamped.
const NEGATIVE_TOL: f64 = 1e-12;

/// Outcome distribution of the network. States follow the network's source
/// order and POVMs its party order. If any source is mixed, all sources are
/// promoted to density matrices and the trace form is used.
pub fn born_distribution(
    net: &NetworkConfig,
    states: &[SourceState],
    povms: &[Povm],
    wiring: &HilbertWiring,
) -> Result<Distribution> {
    let layout = Layout::new(net, states, povms, wiring)?;
    let all_pure = states.iter().all(|s| matches!(s, SourceState::Pure(_)));
    let raw = if all_pure {
        let psi = kron_vectors(states.iter().map(|s| match s {
            SourceState::Pure(v) => v.amplitudes().as_slice(),
            SourceState::Mixed(_) => unreachable!(),
        }));
        let psi = permute_vector(&psi, &layout.particle_dims, wiring.order());
        pure_probabilities(&psi, &layout, povms)
    } else {
        let rhos: Vec<DensityMatrix> = states.iter().map(SourceState::to_density).collect();
        let rho = kron_matrices(&rhos);
        let rho = permute_matrix(&rho, &layout.particle_dims, wiring.order());
        mixed_probabilities(&rho, &layout, povms)
    };
    finish(raw, net.indexer())
}

fn finish(raw: Vec<f64>, indexer: OutcomeIndexer) -> Result<Distribution> {
    let mut probs = Vec::with_capacity(raw.len());
    for (i, p) in raw.into_iter().enumerate() {
        if p < -NEGATIVE_TOL {
            return Err(Error::InvalidDistribution(format!(
                "Born probability {p:e} at outcome {i}"
            )));
        }
        probs.push(p.max(0.0));
    }
    Distribution::new(probs, indexer)
}

struct Layout {
    particle_dims: Vec<usize>,
    // Hilbert-space dimension each party measures.
    block_dims: Vec<usize>,
    outcomes: Vec<usize>,
}

impl Layout {
    fn new(
        net: &NetworkConfig,
        states: &[SourceState],
        povms: &[Povm],
        wiring: &HilbertWiring,
    ) -> Result<Self> {
        if states.len() != net.n_sources() {
            return Err(Error::Dimension(format!(
                "{} states for {} sources",
                states.len(),
                net.n_sources()
            )));
        }
        if povms.len() != net.n_parties() {
            return Err(Error::Dimension(format!(
                "{} POVMs for {} parties",
                povms.len(),
                net.n_parties()
            )));
        }
        let particle_dims: Vec<usize> = states.iter().flat_map(|s| s.dims().to_vec()).collect();
        let particle_source: Vec<usize> = states
            .iter()
            .enumerate()
            .flat_map(|(j, s)| std::iter::repeat(j).take(s.dims().len()))
            .collect();
        let slots = particle_dims.len();
        if wiring.len() != slots {
            return Err(Error::Wiring(format!(
                "wiring has {} entries, states carry {slots} particles",
                wiring.len()
            )));
        }
        // Parties take consecutive Hilbert spaces until their POVM dimension
        // is filled; for one particle per (party, source) pair this is the
        // party's source count.
        let mut block_dims = Vec::with_capacity(net.n_parties());
        let mut slot = 0;
        for (i, (party, povm)) in net.parties().iter().zip(povms).enumerate() {
            if povm.n_outcomes() != party.n_outcomes {
                return Err(Error::Dimension(format!(
                    "party {} has {} outcomes, its POVM {}",
                    party.name,
                    party.n_outcomes,
                    povm.n_outcomes()
                )));
            }
            let mut dim = 1;
            let own = net.party_source_indices(i);
            while dim < povm.dim() && slot < slots {
                let particle = wiring.order()[slot];
                if !own.contains(&particle_source[particle]) {
                    log::warn!(
                        "wiring gives party {} a particle of source {:?}, which does not feed it",
                        party.name,
                        net.sources()[particle_source[particle]]
                    );
                }
                dim *= particle_dims[particle];
                slot += 1;
            }
            if dim != povm.dim() {
                return Err(Error::Dimension(format!(
                    "party {i} ({}) receives dimension {dim}, its POVM acts on {}",
                    party.name,
                    povm.dim()
                )));
            }
            block_dims.push(dim);
        }
        if slot != slots {
            return Err(Error::Dimension(format!(
                "parties measure {slot} Hilbert spaces, states carry {slots} particles"
            )));
        }
        Ok(Layout {
            particle_dims,
            block_dims,
            outcomes: net.outcome_shape(),
        })
    }
}

fn kron_vectors<'a>(parts: impl Iterator<Item = &'a [Complex64]>) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(1.0, 0.0)];
    for v in parts {
        out = out
            .iter()
            .flat_map(|a| v.iter().map(move |b| a * b))
            .collect();
    }
    out
}

fn kron_matrices(parts: &[DensityMatrix]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(1.0, 0.0)];
    let mut dim = 1;
    for r in parts {
        let m = r.matrix();
        let d = m.nrows();
        let nd = dim * d;
        let mut next = vec![Complex64::new(0.0, 0.0); nd * nd];
        for i in 0..dim {
            for j in 0..dim {
                let a = out[i * dim + j];
                for k in 0..d {
                    for l in 0..d {
                        next[(i * d + k) * nd + j * d + l] = a * m[(k, l)];
                    }
                }
            }
        }
        out = next;
        dim = nd;
    }
    out
}

/// For each index of the permuted layout, the flat index in the original
/// source-order layout.
fn permutation_map(particle_dims: &[usize], order: &[usize]) -> Vec<usize> {
    let n = particle_dims.len();
    let mut strides = vec![1; n];
    for k in (0..n.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * particle_dims[k + 1];
    }
    let new_dims: Vec<usize> = order.iter().map(|&p| particle_dims[p]).collect();
    let new_strides: Vec<usize> = order.iter().map(|&p| strides[p]).collect();
    let total: usize = particle_dims.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut digits = vec![0; n];
    let mut old = 0;
    for _ in 0..total {
        map.push(old);
        for l in (0..n).rev() {
            digits[l] += 1;
            old += new_strides[l];
            if digits[l] < new_dims[l] {
                break;
            }
            old -= new_strides[l] * digits[l];
            digits[l] = 0;
        }
    }
    map
}

fn permute_vector(psi: &[Complex64], particle_dims: &[usize], order: &[usize]) -> Vec<Complex64> {
    permutation_map(particle_dims, order)
        .into_iter()
        .map(|j| psi[j])
        .collect()
}

fn permute_matrix(rho: &[Complex64], particle_dims: &[usize], order: &[usize]) -> Vec<Complex64> {
    let map = permutation_map(particle_dims, order);
    let d = map.len();
    let mut out = Vec::with_capacity(d * d);
    for &r in &map {
        out.extend(map.iter().map(|&c| rho[r * d + c]));
    }
    out
}

fn pure_probabilities(psi: &[Complex64], layout: &Layout, povms: &[Povm]) -> Vec<f64> {
    let total: usize = layout.outcomes.iter().product();
    let mut probs = vec![0.0; total];
    let mut buffers: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); psi.len()]; povms.len()];
    pure_level(psi, psi, 0, 0, layout, povms, &mut buffers, &mut probs);
    probs
}

#[allow(clippy::too_many_arguments)]
fn pure_level(
    bra: &[Complex64],
    current: &[Complex64],
    party: usize,
    prefix: usize,
    layout: &Layout,
    povms: &[Povm],
    buffers: &mut [Vec<Complex64>],
    probs: &mut [f64],
) {
    let d = layout.block_dims[party];
    let right: usize = layout.block_dims[party + 1..].iter().product();
    let left = current.len() / (d * right);
    let (mine, rest) = buffers.split_first_mut().expect("one buffer per party");
    for (a, effect) in povms[party].effects().iter().enumerate() {
        // mine = (1 ⊗ M_a ⊗ 1) current
        for l in 0..left {
            for x in 0..d {
                let dst = &mut mine[(l * d + x) * right..(l * d + x + 1) * right];
                dst.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for y in 0..d {
                    let m = effect[(x, y)];
                    if m == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let src = &current[(l * d + y) * right..(l * d + y + 1) * right];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += m * s;
                    }
                }
            }
        }
        let index = prefix * layout.outcomes[party] + a;
        if party + 1 == povms.len() {
            let amp: Complex64 = bra.iter().zip(mine.iter()).map(|(b, v)| b.conj() * v).sum();
            probs[index] = amp.re;
        } else {
            pure_level(bra, mine, party + 1, index, layout, povms, rest, probs);
        }
    }
}

fn mixed_probabilities(rho: &[Complex64], layout: &Layout, povms: &[Povm]) -> Vec<f64> {
    let total: usize = layout.outcomes.iter().product();
    let mut probs = vec![0.0; total];
    mixed_level(rho, 0, 0, layout, povms, &mut probs);
    probs
}

/// Contracts the leading party of `t` (a square matrix over the remaining
/// parties) with `Tr[· M_a]` for each outcome.
fn mixed_level(
    t: &[Complex64],
    party: usize,
    prefix: usize,
    layout: &Layout,
    povms: &[Povm],
    probs: &mut [f64],
) {
    let d = layout.block_dims[party];
    let rest: usize = layout.block_dims[party + 1..].iter().product();
    let full = d * rest;
    let mut out = vec![Complex64::new(0.0, 0.0); rest * rest];
    for (a, effect) in povms[party].effects().iter().enumerate() {
        out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for x in 0..d {
            for y in 0..d {
                let m = effect[(y, x)];
                if m == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for r in 0..rest {
                    let src = &t[(x * rest + r) * full + y * rest..(x * rest + r) * full + y * rest + rest];
                    let dst = &mut out[r * rest..(r + 1) * rest];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += m * s;
                    }
                }
            }
        }
        let index = prefix * layout.outcomes[party] + a;
        if party + 1 == povms.len() {
            probs[index] = out[0].re;
        } else {
            mixed_level(&out, party + 1, index, layout, povms, probs);
        }
    }
}

/// Per-party surjective relabelling of outcomes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeMap {
    maps: Vec<Vec<usize>>,
}

impl MergeMap {
    /// `maps[i][old] = new` for party `i`; each map must hit every value in
    /// `0..=max`.
    pub fn new(maps: Vec<Vec<usize>>) -> Result<Self> {
        for (i, m) in maps.iter().enumerate() {
            let Some(&max) = m.iter().max() else {
                return Err(Error::Merge(format!("party {i} has an empty map")));
            };
            let mut hit = vec![false; max + 1];
            m.iter().for_each(|&v| hit[v] = true);
            if let Some(missing) = hit.iter().position(|h| !h) {
                return Err(Error::Merge(format!(
                    "party {i}: new outcome {missing} receives no old outcome"
                )));
            }
        }
        Ok(MergeMap { maps })
    }

    pub fn identity(shape: &[usize]) -> Self {
        MergeMap {
            maps: shape.iter().map(|&o| (0..o).collect()).collect(),
        }
    }

    /// Every party merges the outcomes in `group` into one outcome placed at
    /// the position of the group's smallest member; others keep their order.
    pub fn merge_group(shape: &[usize], group: &[usize]) -> Result<Self> {
        let maps = shape
            .iter()
            .map(|&o| {
                if let Some(&bad) = group.iter().find(|&&g| g >= o) {
                    return Err(Error::Merge(format!("outcome {bad} out of range for {o} outcomes")));
                }
                let first = group.iter().copied().min().unwrap_or(0);
                let mut next = 0;
                let mut map = vec![0; o];
                for (old, slot) in map.iter_mut().enumerate() {
                    if group.contains(&old) && old != first {
                        continue;
                    }
                    *slot = next;
                    next += 1;
                }
                for &g in group {
                    map[g] = map[first];
                }
                Ok(map)
            })
            .collect::<Result<Vec<_>>>()?;
        MergeMap::new(maps)
    }

    pub fn maps(&self) -> &[Vec<usize>] {
        &self.maps
    }

    pub fn new_shape(&self) -> Vec<usize> {
        self.maps
            .iter()
            .map(|m| m.iter().max().map_or(0, |x| x + 1))
            .collect()
    }
}

/// Sums probabilities over merged outcomes.
pub fn coarse_grain(dist: &Distribution, merges: &MergeMap) -> Result<Distribution> {
    let shape = dist.indexer().shape();
    if merges.maps.len() != shape.len() {
        return Err(Error::Merge(format!(
            "{} party maps for {} parties",
            merges.maps.len(),
            shape.len()
        )));
    }
    for (i, (m, &o)) in merges.maps.iter().zip(shape).enumerate() {
        if m.len() != o {
            return Err(Error::Merge(format!(
                "party {i} map covers {} outcomes, distribution has {o}",
                m.len()
            )));
        }
    }
    let new_indexer = OutcomeIndexer::new(merges.new_shape())?;
    let mut probs = vec![0.0; new_indexer.total()];
    let mut new_tuple = vec![0; shape.len()];
    for (flat, &p) in dist.probs().iter().enumerate() {
        let tuple = dist.indexer().tuple(flat)?;
        for ((n, &a), m) in new_tuple.iter_mut().zip(&tuple).zip(&merges.maps) {
            *n = m[a];
        }
        probs[new_indexer.index(&new_tuple)?] += p;
    }
    Distribution::new(probs, new_indexer)
}
