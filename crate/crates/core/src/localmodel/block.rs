//! Per-party feedforward response block: ReLU hidden layers and a softmax
//! output, evaluated on batches of hidden-variable rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Dense layer shapes inside a block's flat parameter vector. Weights are
/// stored `in_dim x out_dim` row-major, followed by `out_dim` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub offset: usize,
}

impl LayerShape {
    fn n_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }

    pub fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.in_dim * self.out_dim]
    }

    pub fn biases<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.in_dim * self.out_dim;
        &params[start..start + self.out_dim]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseBlock {
    input_dim: usize,
    width: usize,
    depth: usize,
    output_dim: usize,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    rows: usize,
    input: Vec<f64>,
    // Post-activation output of every layer; the last entry is the softmax.
    activations: Vec<Vec<f64>>,
}

impl BlockCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("at least one layer")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    #[cfg(test)]
    pub(crate) fn bytes(&self) -> usize {
        8 * (self.input.len() + self.activations.iter().map(Vec::len).sum::<usize>())
    }
}

impl ResponseBlock {
    /// Zero-initialized block with the given shape.
    pub fn zeros(input_dim: usize, width: usize, depth: usize, output_dim: usize) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut offset = 0;
        let mut in_dim = input_dim;
        for l in 0..=depth {
            let out_dim = if l == depth { output_dim } else { width };
            let shape = LayerShape {
                in_dim,
                out_dim,
                offset,
            };
            offset += shape.n_params();
            layers.push(shape);
            in_dim = out_dim;
        }
        ResponseBlock {
            input_dim,
            width,
            depth,
            output_dim,
            layers,
            params: vec![0.0; offset],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn random<R: Rng>(
        input_dim: usize,
        width: usize,
        depth: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut block = ResponseBlock::zeros(input_dim, width, depth, output_dim);
        for layer in block.layers.clone() {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            let n = layer.in_dim * layer.out_dim;
            for w in &mut block.params[layer.offset..layer.offset + n] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        block
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Output-layer bias slice, mainly useful for hand-built blocks.
    pub fn output_biases_mut(&mut self) -> &mut [f64] {
        let last = *self.layers.last().expect("at least one layer");
        let start = last.offset + last.in_dim * last.out_dim;
        &mut self.params[start..start + last.out_dim]
    }

    pub fn layer_params_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let shape = self.layers[layer];
        let (w, rest) = self.params[shape.offset..].split_at_mut(shape.in_dim * shape.out_dim);
        (w, &mut rest[..shape.out_dim])
    }

    /// Forward pass on `rows x input_dim` inputs, keeping activations.
    pub fn forward(&self, input: &[f64], rows: usize) -> BlockCache {
        debug_assert_eq!(input.len(), rows * self.input_dim);
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = if l == 0 { input } else { &activations[l - 1] };
            let mut y = affine(x, rows, layer, &self.params);
            if l == self.depth {
                softmax_rows(&mut y, layer.out_dim);
            } else {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(y);
        }
        BlockCache {
            rows,
            input: input.to_vec(),
            activations,
        }
    }

    /// Output probabilities only.
    pub fn probabilities(&self, input: &[f64], rows: usize) -> Vec<f64> {
        let mut x = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = affine(&x, rows, layer, &self.params);
            if l == self.depth {
                softmax_rows(&mut y, layer.out_dim);
            } else {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = y;
        }
        x
    }

    /// Accumulates parameter gradients into `grad` given `d_output`, the
    /// derivative of the loss with respect to the softmax probabilities.
    pub fn backward(&self, cache: &BlockCache, d_output: &[f64], grad: &mut [f64]) {
        let rows = cache.rows;
        let probs = cache.output();
        let o = self.output_dim;

        // Softmax Jacobian: dz_j = p_j (dp_j - Σ_l p_l dp_l).
        let mut dz = vec![0.0; rows * o];
        for r in 0..rows {
            let p = &probs[r * o..(r + 1) * o];
            let dp = &d_output[r * o..(r + 1) * o];
            let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
            for j in 0..o {
                dz[r * o + j] = p[j] * (dp[j] - dot);
            }
        }

        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let x: &[f64] = if l == 0 { &cache.input } else { &cache.activations[l - 1] };
            let (gw, gb) = {
                let (w, rest) = grad[layer.offset..].split_at_mut(layer.in_dim * layer.out_dim);
                (w, &mut rest[..layer.out_dim])
            };
            // dW += xᵀ dz
            gemm(
                layer.in_dim,
                rows,
                layer.out_dim,
                x,
                (1, layer.in_dim as isize),
                &dz,
                (layer.out_dim as isize, 1),
                gw,
                1.0,
            );
            for r in 0..rows {
                for (b, d) in gb.iter_mut().zip(&dz[r * layer.out_dim..(r + 1) * layer.out_dim]) {
                    *b += d;
                }
            }
            if l == 0 {
                break;
            }
            // dx = dz Wᵀ, masked by the ReLU of the previous layer.
            let w = layer.weights(&self.params);
            let mut dx = vec![0.0; rows * layer.in_dim];
            gemm(
                rows,
                layer.out_dim,
                layer.in_dim,
                &dz,
                (layer.out_dim as isize, 1),
                w,
                (1, layer.out_dim as isize),
                &mut dx,
                0.0,
            );
            for (d, a) in dx.iter_mut().zip(x) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            dz = dx;
        }
    }
}

fn affine(x: &[f64], rows: usize, layer: &LayerShape, params: &[f64]) -> Vec<f64> {
    let b = layer.biases(params);
    let mut y = Vec::with_capacity(rows * layer.out_dim);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    gemm(
        rows,
        layer.in_dim,
        layer.out_dim,
        x,
        (layer.in_dim as isize, 1),
        layer.weights(params),
        (layer.out_dim as isize, 1),
        &mut y,
        1.0,
    );
    y
}

fn softmax_rows(y: &mut [f64], width: usize) {
    for row in y.chunks_exact_mut(width) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// `c = a·b + beta·c` with `a: m x k`, `b: k x n`, `c: n`-strided row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides describe views inside `a`, `b` and `c`, whose
    // lengths were checked by the callers' shape bookkeeping and the assert.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn outputs_are_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = ResponseBlock::random(2, 7, 3, 5, &mut rng);
        let input: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let p = block.probabilities(&input, 20);
        for row in p.chunks(5) {
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(block.forward(&input, 20).output(), &p[..]);
    }

    #[test]
    fn parameter_count() {
        let block = ResponseBlock::zeros(2, 60, 4, 4);
        assert_eq!(block.n_params(), (2 * 60 + 60) + 3 * (60 * 60 + 60) + (60 * 4 + 4));
        assert_eq!(block.layers().len(), 5);
    }

    #[test]
    fn zero_block_is_uniform() {
        let block = ResponseBlock::zeros(3, 4, 1, 4);
        let p = block.probabilities(&[0.1, 0.5, 0.9], 1);
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let block = ResponseBlock::random(2, 5, 2, 3, &mut rng);
        let rows = 6;
        let input: Vec<f64> = (0..rows * 2).map(|_| rng.gen::<f64>()).collect();
        let weights: Vec<f64> = (0..rows * 3).map(|_| rng.gen::<f64>() - 0.5).collect();
        // Loss = Σ weights ⊙ probabilities, linear in the output.
        let loss = |b: &ResponseBlock| -> f64 {
            b.probabilities(&input, rows)
                .iter()
                .zip(&weights)
                .map(|(p, w)| p * w)
                .sum()
        };
        let cache = block.forward(&input, rows);
        let mut grad = vec![0.0; block.n_params()];
        block.backward(&cache, &weights, &mut grad);
        let h = 1e-6;
        for i in 0..block.n_params() {
            let mut plus = block.clone();
            plus.params_mut()[i] += h;
            let mut minus = block.clone();
            minus.params_mut()[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
