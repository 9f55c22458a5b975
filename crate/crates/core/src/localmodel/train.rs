//! Training loop: Adam on freshly drawn samples whose size follows the
//! sampling controller, early stopping on a smoothed loss, an optional
//! Euclidean second stage, and restarts.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::controller::SamplingController;
use super::loss::LossKind;
use super::net::{check_target, HiddenSample, LocalModelNet};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use crate::topology::{euclid_slices, kl_slices, Distribution, NetworkConfig};

const SAMPLE_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const RESTART_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub patience: usize,
    pub stage2_euclid_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_samples: usize,
    pub smoothing_window: usize,
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 10_000,
            patience: 1_000,
            stage2_euclid_iters: 0,
            learning_rate: 1e-3,
            seed: 0,
            eval_samples: 1_000_000,
            smoothing_window: 50,
            restarts: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.max_iters > 0
            && self.patience > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.eval_samples > 0
            && self.smoothing_window > 0
            && self.restarts > 0;
        if positive {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub stage: u8,
    pub loss: f64,
    pub smoothed: f64,
    pub samples: usize,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub final_kl: f64,
    pub final_euclid: f64,
    /// Smallest raw per-iteration loss of the last stage; affected by
    /// sampling noise.
    pub best_during_training: f64,
    pub best_loss_kind: LossKind,
    pub iterations_run: usize,
    pub stage1_iterations: usize,
    pub end_samples: usize,
    pub final_bias: f64,
    pub seed: u64,
    pub restart: usize,
    #[serde(default)]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<IterationRecord>,
}

impl TrainResult {
    /// Final distance in the metric the last stage optimized.
    pub fn final_objective(&self) -> f64 {
        match self.best_loss_kind {
            LossKind::Kl => self.final_kl,
            LossKind::Euclidean => self.final_euclid,
        }
    }
}

/// Trains `net` in place. Stage 1 uses the controller's loss kind; a
/// positive `stage2_euclid_iters` adds that many Euclidean iterations.
pub fn train(
    net: &mut LocalModelNet,
    target: &Distribution,
    tcfg: &TrainConfig,
    ctrl: &SamplingController,
) -> Result<TrainResult> {
    tcfg.validate()?;
    ctrl.validate()?;
    check_target(net.config(), target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, &[SAMPLE_STREAM]));
    let mut history = Vec::new();

    let mut ctrl1 = ctrl.clone();
    ctrl1.n_outcomes = target.len();
    let stage1 = run_stage(
        net,
        target,
        &mut ctrl1,
        &mut rng,
        StagePlan {
            stage: 1,
            max_iters: tcfg.max_iters,
            patience: Some(tcfg.patience),
            first_loss: None,
            offset: 0,
        },
        tcfg,
        &mut history,
    )?;

    let stage1_iterations = stage1.iterations;
    let mut last = stage1;
    let mut final_ctrl = ctrl1;
    if tcfg.stage2_euclid_iters > 0 {
        let mut ctrl2 = ctrl.clone();
        ctrl2.loss_kind = LossKind::Euclidean;
        ctrl2.n_outcomes = target.len();
        let first = euclid_slices(target.probs(), last.last_estimate.probs());
        last = run_stage(
            net,
            target,
            &mut ctrl2,
            &mut rng,
            StagePlan {
                stage: 2,
                max_iters: tcfg.stage2_euclid_iters,
                patience: None,
                first_loss: Some(first),
                offset: stage1_iterations,
            },
            tcfg,
            &mut history,
        )?;
        final_ctrl = ctrl2;
    }

    let (final_kl, final_euclid) =
        evaluate(net, target, tcfg.eval_samples, derive_seed(tcfg.seed, &[EVAL_STREAM]))?;
    Ok(TrainResult {
        final_kl,
        final_euclid,
        best_during_training: last.best_raw,
        best_loss_kind: final_ctrl.loss_kind,
        iterations_run: stage1_iterations + if tcfg.stage2_euclid_iters > 0 { last.iterations } else { 0 },
        stage1_iterations,
        end_samples: last.last_samples,
        final_bias: final_ctrl.bias,
        seed: tcfg.seed,
        restart: 0,
        checkpoint: None,
        history,
    })
}

/// Initializes and trains `tcfg.restarts` independent models and keeps the
/// one with the smallest final distance in the last stage's metric. Restart
/// 0 uses `tcfg.seed` itself.
pub fn fit(
    config: &NetworkConfig,
    target: &Distribution,
    width: usize,
    depth: usize,
    tcfg: &TrainConfig,
    ctrl: &SamplingController,
) -> Result<(LocalModelNet, TrainResult)> {
    tcfg.validate()?;
    let mut best: Option<(LocalModelNet, TrainResult)> = None;
    for r in 0..tcfg.restarts {
        let seed = restart_seed(tcfg.seed, r);
        let mut run_cfg = tcfg.clone();
        run_cfg.seed = seed;
        run_cfg.restarts = 1;
        let mut net = LocalModelNet::init(config, width, depth, seed)?;
        let mut result = train(&mut net, target, &run_cfg, ctrl)?;
        result.restart = r;
        log::info!(
            "restart {r} (seed {seed}): final KL {:.3e}, Euclidean {:.3e}",
            result.final_kl,
            result.final_euclid
        );
        let better = best
            .as_ref()
            .map_or(true, |(_, b)| result.final_objective() < b.final_objective());
        if better {
            best = Some((net, result));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Seed of restart `r` under base seed `seed`.
pub fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive_seed(seed, &[RESTART_STREAM, r as u64])
    }
}

/// KL divergence and Euclidean distance between `target` and the net's
/// empirical distribution on one fresh sample of `n_eval` rows.
pub fn evaluate(net: &LocalModelNet, target: &Distribution, n_eval: usize, seed: u64) -> Result<(f64, f64)> {
    check_target(net.config(), target)?;
    if n_eval == 0 {
        return Err(Error::Domain("evaluation needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = HiddenSample::draw(&mut rng, n_eval, net.config().n_sources());
    let estimate = net.forward_empirical(&sample)?;
    Ok((
        kl_slices(target.probs(), estimate.probs()),
        euclid_slices(target.probs(), estimate.probs()),
    ))
}

struct StagePlan {
    stage: u8,
    max_iters: usize,
    patience: Option<usize>,
    first_loss: Option<f64>,
    offset: usize,
}

struct StageOutcome {
    iterations: usize,
    best_raw: f64,
    last_samples: usize,
    last_estimate: Distribution,
}

fn run_stage(
    net: &mut LocalModelNet,
    target: &Distribution,
    ctrl: &mut SamplingController,
    rng: &mut ChaCha8Rng,
    plan: StagePlan,
    tcfg: &TrainConfig,
    history: &mut Vec<IterationRecord>,
) -> Result<StageOutcome> {
    let kind = ctrl.loss_kind;
    let mut adam = Adam::new(tcfg.learning_rate, &net.zero_gradients());
    let mut window: VecDeque<f64> = VecDeque::with_capacity(tcfg.smoothing_window);
    let mut window_sum = 0.0;
    let mut best_smoothed = f64::INFINITY;
    let mut best_raw = f64::INFINITY;
    let mut since_improvement = 0;
    let mut since_bias_change = 0;
    let mut n_samples = plan.first_loss.map_or(ctrl.n_min, |l| ctrl.next_sample_count(l));
    let mut iterations = 0;
    let mut last_samples = n_samples;
    let mut last_estimate = None;

    while iterations < plan.max_iters {
        let sample = HiddenSample::draw(rng, n_samples, net.config().n_sources());
        let (loss, estimate, grads) = net.loss_and_gradient(target, &sample, kind)?;
        adam.update(net.blocks_mut().iter_mut().map(|b| b.params_mut()), &grads);
        iterations += 1;
        last_samples = n_samples;
        last_estimate = Some(estimate);

        if window.len() == tcfg.smoothing_window {
            window_sum -= window.pop_front().expect("full window");
        }
        window.push_back(loss);
        window_sum += loss;
        let smoothed = window_sum / window.len() as f64;
        best_raw = best_raw.min(loss);
        if smoothed < best_smoothed {
            best_smoothed = smoothed;
            since_improvement = 0;
            since_bias_change = 0;
        } else {
            since_improvement += 1;
            since_bias_change += 1;
        }
        if ctrl.bump_bias(since_bias_change) {
            since_bias_change = 0;
        }
        history.push(IterationRecord {
            iteration: plan.offset + iterations,
            stage: plan.stage,
            loss,
            smoothed,
            samples: n_samples,
            bias: ctrl.bias,
        });
        if iterations % 500 == 0 {
            log::info!(
                "stage {} iteration {iterations}: {} {loss:.3e} (smoothed {smoothed:.3e}), {n_samples} samples, B = {}",
                plan.stage,
                kind.name(),
                ctrl.bias
            );
        }
        if plan.patience.is_some_and(|p| since_improvement >= p) {
            log::info!("stage {} stopped after {iterations} iterations without improvement", plan.stage);
            break;
        }
        n_samples = ctrl.next_sample_count(loss);
    }

    Ok(StageOutcome {
        iterations,
        best_raw,
        last_samples,
        last_estimate: last_estimate.expect("at least one iteration"),
    })
}
