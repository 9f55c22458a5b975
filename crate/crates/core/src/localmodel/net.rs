//! The topology-matched ansatz: one response block per party, each reading
//! only the hidden variables of the sources wired to that party.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::block::{BlockCache, ResponseBlock};
use super::loss::LossKind;
use crate::error::{Error, Result};
use crate::topology::{Distribution, NetworkConfig, OutcomeIndexer};

/// Samples processed together through the blocks.
pub const CHUNK_ROWS: usize = 4096;

// Forward caches are reused by the backward pass below this size.
const CACHE_BUDGET_BYTES: usize = 512 << 20;

/// `N_s x m` hidden-variable draws, iid uniform on `[0, 1)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSample {
    values: Vec<f64>,
    n_sources: usize,
}

impl HiddenSample {
    pub fn draw<R: Rng>(rng: &mut R, rows: usize, n_sources: usize) -> Self {
        let values = (0..rows * n_sources).map(|_| rng.gen::<f64>()).collect();
        HiddenSample { values, n_sources }
    }

    pub fn from_values(values: Vec<f64>, n_sources: usize) -> Result<Self> {
        if n_sources == 0 || values.len() % n_sources != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not form rows of {n_sources} sources",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..1.0).contains(v)) {
            return Err(Error::Domain("hidden variables must lie in [0, 1)".into()));
        }
        Ok(HiddenSample { values, n_sources })
    }

    pub fn rows(&self) -> usize {
        self.values.len() / self.n_sources
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn gather(&self, start: usize, end: usize, columns: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity((end - start) * columns.len());
        for r in start..end {
            let row = &self.values[r * self.n_sources..(r + 1) * self.n_sources];
            out.extend(columns.iter().map(|&c| row[c]));
        }
        out
    }
}

/// Per-block parameter gradients, laid out like the blocks' flat parameters.
pub type Gradients = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModelNet {
    config: NetworkConfig,
    width: usize,
    depth: usize,
    blocks: Vec<ResponseBlock>,
    wiring: Vec<Vec<usize>>,
}

impl LocalModelNet {
    /// Deterministic initialization from `seed`.
    pub fn init(config: &NetworkConfig, width: usize, depth: usize, seed: u64) -> Result<Self> {
        if width == 0 || depth == 0 {
            return Err(Error::Domain("width and depth must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wiring: Vec<Vec<usize>> = (0..config.n_parties())
            .map(|i| config.party_source_indices(i))
            .collect();
        let blocks = config
            .parties()
            .iter()
            .zip(&wiring)
            .map(|(p, w)| ResponseBlock::random(w.len(), width, depth, p.n_outcomes, &mut rng))
            .collect();
        Ok(LocalModelNet {
            config: config.clone(),
            width,
            depth,
            blocks,
            wiring,
        })
    }

    /// Assembles a net from explicit blocks, checking them against `config`.
    pub fn from_blocks(config: &NetworkConfig, blocks: Vec<ResponseBlock>) -> Result<Self> {
        if blocks.len() != config.n_parties() {
            return Err(Error::Dimension(format!(
                "{} blocks for {} parties",
                blocks.len(),
                config.n_parties()
            )));
        }
        let wiring: Vec<Vec<usize>> = (0..config.n_parties())
            .map(|i| config.party_source_indices(i))
            .collect();
        for (i, (b, w)) in blocks.iter().zip(&wiring).enumerate() {
            if b.input_dim() != w.len() || b.output_dim() != config.parties()[i].n_outcomes {
                return Err(Error::Dimension(format!(
                    "block {i} maps {} -> {}, party needs {} -> {}",
                    b.input_dim(),
                    b.output_dim(),
                    w.len(),
                    config.parties()[i].n_outcomes
                )));
            }
        }
        let width = blocks[0].width();
        let depth = blocks[0].depth();
        Ok(LocalModelNet {
            config: config.clone(),
            width,
            depth,
            blocks,
            wiring,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn blocks(&self) -> &[ResponseBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ResponseBlock] {
        &mut self.blocks
    }

    /// Source indices (into the hidden sample columns) read by each block.
    pub fn wiring(&self) -> &[Vec<usize>] {
        &self.wiring
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(ResponseBlock::n_params).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.blocks.iter().map(|b| vec![0.0; b.n_params()]).collect()
    }

    fn check_sample(&self, sample: &HiddenSample) -> Result<()> {
        if sample.n_sources() != self.config.n_sources() {
            return Err(Error::Dimension(format!(
                "sample has {} columns, network has {} sources",
                sample.n_sources(),
                self.config.n_sources()
            )));
        }
        if sample.rows() == 0 {
            return Err(Error::Dimension("empty hidden sample".into()));
        }
        Ok(())
    }

    fn forward_chunk(&self, sample: &HiddenSample, start: usize, end: usize) -> Vec<BlockCache> {
        self.blocks
            .iter()
            .zip(&self.wiring)
            .map(|(b, w)| b.forward(&sample.gather(start, end, w), end - start))
            .collect()
    }

    /// Party response probabilities `p_{A_i}(·|λ)` for each row of `sample`.
    pub fn party_probabilities(&self, party: usize, sample: &HiddenSample) -> Vec<f64> {
        let rows = sample.rows();
        self.blocks[party].probabilities(&sample.gather(0, rows, &self.wiring[party]), rows)
    }

    /// Empirical model distribution: the sample mean of the product of the
    /// parties' response vectors.
    pub fn forward_empirical(&self, sample: &HiddenSample) -> Result<Distribution> {
        self.check_sample(sample)?;
        let (probs, _) = self.empirical_raw(sample, false);
        Distribution::new(probs, self.config.indexer())
    }

    /// Returns the unnormalized-by-validation empirical vector and, when they
    /// fit in the cache budget, the forward caches per chunk.
    fn empirical_raw(
        &self,
        sample: &HiddenSample,
        keep_caches: bool,
    ) -> (Vec<f64>, Option<Vec<Vec<BlockCache>>>) {
        let rows = sample.rows();
        let shape = self.config.outcome_shape();
        let total: usize = shape.iter().product();
        let chunks = chunk_bounds(rows);
        let keep_caches = keep_caches && self.cache_bytes(rows) <= CACHE_BUDGET_BYTES;
        let per_chunk: Vec<(Vec<f64>, Option<Vec<BlockCache>>)> = chunks
            .par_iter()
            .map(|&(s, e)| {
                let caches = self.forward_chunk(sample, s, e);
                let mut acc = vec![0.0; total];
                let outputs: Vec<&[f64]> = caches.iter().map(BlockCache::output).collect();
                let mut scratch = ProductScratch::new(&shape);
                for r in 0..(e - s) {
                    scratch.accumulate_outer(&outputs, r, &mut acc);
                }
                (acc, keep_caches.then_some(caches))
            })
            .collect();

        let mut probs = vec![0.0; total];
        let mut caches = Vec::with_capacity(chunks.len());
        for (acc, c) in per_chunk {
            for (p, a) in probs.iter_mut().zip(&acc) {
                *p += a;
            }
            caches.extend(c);
        }
        let inv = 1.0 / rows as f64;
        probs.iter_mut().for_each(|p| *p *= inv);
        (probs, keep_caches.then_some(caches))
    }

    /// Memory held by the forward caches of `rows` samples.
    fn cache_bytes(&self, rows: usize) -> usize {
        let per_row: usize = self
            .blocks
            .iter()
            .map(|b| b.input_dim() + b.width() * b.depth() + b.output_dim())
            .sum();
        8 * rows * per_row
    }

    /// Loss of the empirical distribution against `target` together with the
    /// exact gradient of that loss with respect to every block parameter, the
    /// sample held fixed.
    pub fn loss_and_gradient(
        &self,
        target: &Distribution,
        sample: &HiddenSample,
        kind: LossKind,
    ) -> Result<(f64, Distribution, Gradients)> {
        self.check_sample(sample)?;
        check_target(&self.config, target)?;
        let (probs, caches) = self.empirical_raw(sample, true);
        let (loss, d_phat) = kind.value_and_grad(target.probs(), &probs);
        let grads = self.backprop(sample, &d_phat, caches);
        let estimate = Distribution::new(probs, self.config.indexer())?;
        Ok((loss, estimate, grads))
    }

    /// Gradient of any loss whose derivative with respect to the empirical
    /// distribution is `d_phat`.
    pub fn gradient_from_distribution_grad(
        &self,
        sample: &HiddenSample,
        d_phat: &[f64],
    ) -> Result<Gradients> {
        self.check_sample(sample)?;
        if d_phat.len() != self.config.indexer().total() {
            return Err(Error::Shape(format!(
                "gradient of length {} for {} outcomes",
                d_phat.len(),
                self.config.indexer().total()
            )));
        }
        Ok(self.backprop(sample, d_phat, None))
    }

    fn backprop(
        &self,
        sample: &HiddenSample,
        d_phat: &[f64],
        caches: Option<Vec<Vec<BlockCache>>>,
    ) -> Gradients {
        let rows = sample.rows();
        let shape = self.config.outcome_shape();
        let inv = 1.0 / rows as f64;
        let chunks = chunk_bounds(rows);

        let chunk_grad = |idx: usize, cached: Option<&Vec<BlockCache>>| -> Gradients {
            let (s, e) = chunks[idx];
            let owned;
            let caches = match cached {
                Some(c) => c,
                None => {
                    owned = self.forward_chunk(sample, s, e);
                    &owned
                }
            };
            let outputs: Vec<&[f64]> = caches.iter().map(BlockCache::output).collect();
            let mut d_out: Vec<Vec<f64>> = caches
                .iter()
                .zip(&shape)
                .map(|(c, &o)| vec![0.0; c.rows() * o])
                .collect();
            let mut scratch = ContractionScratch::new(&shape);
            for r in 0..(e - s) {
                scratch.party_gradients(d_phat, &outputs, r, inv, &mut d_out);
            }
            let mut grads = self.zero_gradients();
            for (((b, c), d), g) in self.blocks.iter().zip(caches).zip(&d_out).zip(&mut grads) {
                b.backward(c, d, g);
            }
            grads
        };

        let mut total = self.zero_gradients();
        // Ordered reduction in fixed groups keeps results independent of the
        // thread count.
        let group = rayon::current_num_threads().max(1) * 2;
        let indices: Vec<usize> = (0..chunks.len()).collect();
        for ids in indices.chunks(group) {
            let parts: Vec<Gradients> = ids
                .par_iter()
                .map(|&i| chunk_grad(i, caches.as_ref().map(|c| &c[i])))
                .collect();
            for part in parts {
                for (t, p) in total.iter_mut().zip(&part) {
                    for (a, b) in t.iter_mut().zip(p) {
                        *a += b;
                    }
                }
            }
        }
        total
    }
}

pub(crate) fn check_target(config: &NetworkConfig, target: &Distribution) -> Result<()> {
    let expected: OutcomeIndexer = config.indexer();
    if target.indexer() != &expected {
        return Err(Error::Shape(format!(
            "target over {:?}, network has outcome shape {:?}",
            target.indexer().shape(),
            expected.shape()
        )));
    }
    Ok(())
}

fn chunk_bounds(rows: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .step_by(CHUNK_ROWS)
        .map(|s| (s, (s + CHUNK_ROWS).min(rows)))
        .collect()
}

/// Builds the outer product of the parties' response vectors for one row.
struct ProductScratch {
    shape: Vec<usize>,
    buf: Vec<f64>,
    next: Vec<f64>,
}

impl ProductScratch {
    fn new(shape: &[usize]) -> Self {
        let total = shape.iter().product();
        ProductScratch {
            shape: shape.to_vec(),
            buf: Vec::with_capacity(total),
            next: Vec::with_capacity(total),
        }
    }

    fn accumulate_outer(&mut self, outputs: &[&[f64]], row: usize, acc: &mut [f64]) {
        let last = self.shape.len() - 1;
        self.buf.clear();
        self.buf.push(1.0);
        for (i, &o) in self.shape[..last].iter().enumerate() {
            let p = &outputs[i][row * o..(row + 1) * o];
            self.next.clear();
            for &w in &self.buf {
                self.next.extend(p.iter().map(|x| w * x));
            }
            std::mem::swap(&mut self.buf, &mut self.next);
        }
        let o = self.shape[last];
        let p = &outputs[last][row * o..(row + 1) * o];
        for (prefix, &w) in self.buf.iter().enumerate() {
            let dst = &mut acc[prefix * o..(prefix + 1) * o];
            for (d, x) in dst.iter_mut().zip(p) {
                *d += w * x;
            }
        }
    }
}

/// For one row, contracts the distribution gradient with every party's
/// response vector except one, yielding `∂L/∂p_{A_i}(a_i|λ)` for each party.
struct ContractionScratch {
    shape: Vec<usize>,
    // suffix[k]: gradient contracted over parties k.. (axes 0..k remain).
    suffix: Vec<Vec<f64>>,
    prefix: Vec<f64>,
    next: Vec<f64>,
}

impl ContractionScratch {
    fn new(shape: &[usize]) -> Self {
        let n = shape.len();
        let suffix = (0..=n)
            .map(|k| vec![0.0; shape[..k].iter().product()])
            .collect();
        ContractionScratch {
            shape: shape.to_vec(),
            suffix,
            prefix: Vec::new(),
            next: Vec::new(),
        }
    }

    fn party_gradients(
        &mut self,
        d_phat: &[f64],
        outputs: &[&[f64]],
        row: usize,
        scale: f64,
        d_out: &mut [Vec<f64>],
    ) {
        let n = self.shape.len();
        // suffix[n] is the full gradient; suffix[k] = suffix[k+1] · p_k.
        for k in (1..n).rev() {
            let o = self.shape[k];
            let p = &outputs[k][row * o..(row + 1) * o];
            let (lo, hi) = self.suffix.split_at_mut(k + 1);
            let src: &[f64] = if k + 1 == n { d_phat } else { &hi[0] };
            for (dst, block) in lo[k].iter_mut().zip(src.chunks_exact(o)) {
                *dst = block.iter().zip(p).map(|(a, b)| a * b).sum();
            }
        }
        self.prefix.clear();
        self.prefix.push(1.0);
        for i in 0..n {
            let o = self.shape[i];
            let r: &[f64] = if i + 1 == n { d_phat } else { &self.suffix[i + 1] };
            let dst = &mut d_out[i][row * o..(row + 1) * o];
            for (w, block) in self.prefix.iter().zip(r.chunks_exact(o)) {
                for (d, x) in dst.iter_mut().zip(block) {
                    *d += scale * w * x;
                }
            }
            if i + 1 < n {
                let p = &outputs[i][row * o..(row + 1) * o];
                self.next.clear();
                for &w in &self.prefix {
                    self.next.extend(p.iter().map(|x| w * x));
                }
                std::mem::swap(&mut self.prefix, &mut self.next);
            }
        }
    }
}
