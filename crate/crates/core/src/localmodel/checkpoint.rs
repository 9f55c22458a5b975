//! Versioned checkpoint documents and strategy-grid export.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::block::ResponseBlock;
use super::controller::SamplingController;
use super::net::{HiddenSample, LocalModelNet};
use super::train::{TrainConfig, TrainResult};
use crate::error::{Error, Result};
use crate::topology::NetworkConfig;

pub const CHECKPOINT_FORMAT: &str = "netlocal-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDoc {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `in_dim x out_dim`, row-major.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDoc {
    pub party: String,
    pub layers: Vec<LayerDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub network: NetworkConfig,
    pub width: usize,
    pub depth: usize,
    pub seed: u64,
    pub blocks: Vec<BlockDoc>,
    pub controller: SamplingController,
    pub train_config: TrainConfig,
    pub result: TrainResult,
}

impl Checkpoint {
    /// Snapshot of `net`; the result's iteration history is dropped.
    pub fn new(
        net: &LocalModelNet,
        controller: &SamplingController,
        train_config: &TrainConfig,
        result: &TrainResult,
    ) -> Self {
        let blocks = net
            .blocks()
            .iter()
            .zip(net.config().parties())
            .map(|(b, p)| BlockDoc {
                party: p.name.clone(),
                layers: b
                    .layers()
                    .iter()
                    .map(|l| LayerDoc {
                        in_dim: l.in_dim,
                        out_dim: l.out_dim,
                        weights: l.weights(b.params()).to_vec(),
                        biases: l.biases(b.params()).to_vec(),
                    })
                    .collect(),
            })
            .collect();
        let mut result = result.clone();
        result.history.clear();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            network: net.config().clone(),
            width: net.width(),
            depth: net.depth(),
            seed: result.seed,
            blocks,
            controller: controller.clone(),
            train_config: train_config.clone(),
            result,
        }
    }

    /// Rebuilds the network, checking every layer shape.
    pub fn to_net(&self) -> Result<LocalModelNet> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {:?} version {}",
                self.format, self.version
            )));
        }
        if self.blocks.len() != self.network.n_parties() {
            return Err(Error::Checkpoint(format!(
                "{} blocks for {} parties",
                self.blocks.len(),
                self.network.n_parties()
            )));
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, (doc, party)) in self.blocks.iter().zip(self.network.parties()).enumerate() {
            if doc.party != party.name {
                return Err(Error::Checkpoint(format!(
                    "block {i} belongs to {:?}, expected {:?}",
                    doc.party, party.name
                )));
            }
            let mut block =
                ResponseBlock::zeros(party.sources.len(), self.width, self.depth, party.n_outcomes);
            if doc.layers.len() != block.layers().len() {
                return Err(Error::Checkpoint(format!(
                    "block {i} has {} layers, expected {}",
                    doc.layers.len(),
                    block.layers().len()
                )));
            }
            for (l, layer) in doc.layers.iter().enumerate() {
                let shape = block.layers()[l];
                let ok = layer.in_dim == shape.in_dim
                    && layer.out_dim == shape.out_dim
                    && layer.weights.len() == shape.in_dim * shape.out_dim
                    && layer.biases.len() == shape.out_dim;
                if !ok {
                    return Err(Error::Checkpoint(format!(
                        "block {i} layer {l} does not match {}x{}",
                        shape.in_dim, shape.out_dim
                    )));
                }
                let (w, b) = block.layer_params_mut(l);
                w.copy_from_slice(&layer.weights);
                b.copy_from_slice(&layer.biases);
            }
            blocks.push(block);
        }
        LocalModelNet::from_blocks(&self.network, blocks)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        ck.to_net()?;
        Ok(ck)
    }
}

/// Response probabilities of a two-source party on a square lattice of
/// hidden-variable values.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyGrid {
    pub party: String,
    /// The party's sources: `lambda_a` is the first, `lambda_b` the second.
    pub sources: [String; 2],
    pub resolution: usize,
    pub n_outcomes: usize,
    /// Rows of `(lambda_a, lambda_b, p_0..p_{o-1})`, `lambda_b` fastest.
    pub rows: Vec<(f64, f64, Vec<f64>)>,
}

impl StrategyGrid {
    pub fn header(&self) -> String {
        let mut cols = vec!["lambda_a".to_string(), "lambda_b".to_string()];
        cols.extend((0..self.n_outcomes).map(|a| format!("p_{a}")));
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header())?;
        for (a, b, p) in &self.rows {
            let probs: Vec<String> = p.iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(out, "{a},{b},{}", probs.join(","))?;
        }
        Ok(())
    }
}

/// Evaluates `party`'s response on the cell centres `(i + 1/2) / resolution`
/// of a `resolution x resolution` lattice over `[0, 1)²`.
pub fn export_strategies(net: &LocalModelNet, party: &str, resolution: usize) -> Result<StrategyGrid> {
    let i = net
        .config()
        .party_index(party)
        .ok_or_else(|| Error::Config {
            location: "party".into(),
            message: format!("no party named {party:?}"),
        })?;
    let spec = &net.config().parties()[i];
    if spec.sources.len() != 2 {
        return Err(Error::Dimension(format!(
            "party {party:?} has {} sources, strategy grids need exactly 2",
            spec.sources.len()
        )));
    }
    if resolution == 0 {
        return Err(Error::Domain("grid resolution must be positive".into()));
    }
    let cols = net.wiring()[i].clone();
    let m = net.config().n_sources();
    let step = 1.0 / resolution as f64;
    let mut values = vec![0.0; resolution * resolution * m];
    let mut coords = Vec::with_capacity(resolution * resolution);
    for a in 0..resolution {
        for b in 0..resolution {
            let (la, lb) = ((a as f64 + 0.5) * step, (b as f64 + 0.5) * step);
            let row = coords.len();
            values[row * m + cols[0]] = la;
            values[row * m + cols[1]] = lb;
            coords.push((la, lb));
        }
    }
    let sample = HiddenSample::from_values(values, m)?;
    let probs = net.party_probabilities(i, &sample);
    let o = spec.n_outcomes;
    let rows = coords
        .into_iter()
        .enumerate()
        .map(|(r, (la, lb))| (la, lb, probs[r * o..(r + 1) * o].to_vec()))
        .collect();
    Ok(StrategyGrid {
        party: party.to_string(),
        sources: [spec.sources[0].clone(), spec.sources[1].clone()],
        resolution,
        n_outcomes: o,
        rows,
    })
}
