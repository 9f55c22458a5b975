use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::ValueEnum;
use netlocal::calibrate::{fit_scalings, sampling_error_study, CalibrationReport, ScalingFit};
use netlocal::localmodel::{export_strategies, fit, Checkpoint, LossKind, SamplingController, TrainConfig};
use netlocal::quantum::raw::{parse_povm, parse_state};
use netlocal::quantum::{
    bell_state, born_distribution, coarse_grain, computational_basis_povm, rgb4_povm, rotated_state,
    tetra_joint_measurement, werner, BellKind, HilbertWiring, MergeMap, Realization, SourceState,
};
use netlocal::scan::{self, ScanPoint, ScanSettings, ScanSidecar};
use netlocal::topology::{parse_values, Distribution, NetworkConfig};
use serde::Serialize;

use crate::args::*;
use crate::manifest::RunManifest;

/// Invalid flags or inputs; exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Some scan points failed; exit code 3.
#[derive(Debug, thiserror::Error)]
#[error("{failed} of {total} scan points failed")]
pub struct PartialFailure {
    pub failed: usize,
    pub total: usize,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Names output files `<stem>_<UTC timestamp>.<ext>` inside the output
/// directory and records them for the manifest.
struct Outputs {
    dir: PathBuf,
    stem: String,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(out_dir: &Path, stem: &str) -> Result<Self> {
        std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ").to_string();
        let mut candidate = format!("{stem}_{stamp}");
        let mut n = 1;
        while std::fs::read_dir(out_dir)?
            .filter_map(|e| e.ok())
            .any(|e| e.file_name().to_string_lossy().starts_with(&format!("{candidate}.")))
        {
            candidate = format!("{stem}_{stamp}-{n}");
            n += 1;
        }
        Ok(Outputs {
            dir: out_dir.to_path_buf(),
            stem: candidate,
            written: Vec::new(),
        })
    }

    fn path(&mut self, suffix: &str) -> PathBuf {
        let p = self.dir.join(format!("{}{suffix}", self.stem));
        self.written.push(p.clone());
        p
    }

    fn create(&mut self, suffix: &str) -> Result<BufWriter<File>> {
        let p = self.path(suffix);
        Ok(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    }

    fn json<T: Serialize>(&mut self, suffix: &str, value: &T) -> Result<PathBuf> {
        let p = self.path(suffix);
        std::fs::write(&p, serde_json::to_string_pretty(value)?)
            .with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    fn finish(self, mut manifest: RunManifest) -> Result<()> {
        manifest.outputs = self.written.clone();
        let path = self.dir.join(format!("{}.manifest.json", self.stem));
        manifest.save(&path)?;
        for p in &self.written {
            println!("wrote {}", p.display());
        }
        println!("manifest {}", path.display());
        Ok(())
    }
}

pub fn run(command: &Command, out_dir: &Path) -> Result<()> {
    match command {
        Command::QuantumDist(a) => quantum_dist(command, a, out_dir),
        Command::Fit(a) => fit_cmd(command, a, out_dir),
        Command::Scan(a) => scan_cmd(command, a, out_dir),
        Command::Calibrate(a) => calibrate(command, a, out_dir),
        Command::ExportStrats(a) => export(command, a, out_dir),
        Command::Replay(a) => {
            let manifest = RunManifest::load(&a.manifest)?;
            manifest.check_inputs()?;
            log::info!("replaying {} from {}", manifest.created, a.manifest.display());
            run(&manifest.command, out_dir)
        }
    }
}

/// Ring preset name or path to a JSON config file.
fn is_file_network(name: &str) -> bool {
    NetworkConfig::preset(name, 2).is_none()
}

fn load_network(name: &str, outcomes: usize, manifest: &mut RunManifest) -> Result<NetworkConfig> {
    match NetworkConfig::preset(name, outcomes) {
        Some(config) => Ok(config?),
        None => {
            let path = Path::new(name);
            if !path.exists() {
                return Err(usage(format!(
                    "--network {name:?} is neither a preset (triangle, square, pentagon) nor a file"
                )));
            }
            manifest.add_input(path)?;
            let text = std::fs::read_to_string(path)?;
            NetworkConfig::parse(&text).with_context(|| format!("network config {name}"))
        }
    }
}

fn read_input(path: &Path, manifest: &mut RunManifest) -> Result<String> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    manifest.add_input(path)?;
    Ok(text)
}

/// `lo:hi:n` (inclusive, evenly spaced) or a comma list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("not a number: {s:?} in {text:?}")))
    };
    match parts.len() {
        1 => text.split(',').map(num).collect(),
        3 => {
            let n: usize = parts[2]
                .trim()
                .parse()
                .map_err(|_| usage(format!("not a point count: {:?}", parts[2])))?;
            if n == 0 {
                return Err(usage(format!("empty grid {text:?}")));
            }
            Ok(scan::linspace(num(parts[0])?, num(parts[1])?, n))
        }
        _ => Err(usage(format!("grid {text:?} is neither lo:hi:n nor a comma list"))),
    }
}

/// Comma list of counts, or `lo..hi` meaning every decade from `lo` to `hi`.
/// Scientific notation is accepted.
pub fn parse_counts(text: &str) -> Result<Vec<usize>> {
    let count = |s: &str| -> Result<usize> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| usage(format!("not a count: {s:?}")))?;
        if !(v >= 1.0) || v.fract() != 0.0 || v > 1e15 {
            return Err(usage(format!("not a positive integer: {s:?}")));
        }
        Ok(v as usize)
    };
    if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi) = (count(lo)?, count(hi)?);
        if lo > hi {
            return Err(usage(format!("empty range {text:?}")));
        }
        let mut out = Vec::new();
        let mut v = lo;
        while v <= hi {
            out.push(v);
            v *= 10;
        }
        Ok(out)
    } else {
        text.split(',').map(count).collect()
    }
}

/// `01` or `0,1`: the outcomes to merge.
pub fn parse_group(text: &str) -> Result<Vec<usize>> {
    let group: Vec<usize> = if text.contains(',') {
        text.split(',')
            .map(|t| t.trim().parse().map_err(|_| usage(format!("bad outcome {t:?}"))))
            .collect::<Result<_>>()?
    } else {
        text.chars()
            .map(|c| {
                c.to_digit(10)
                    .map(|d| d as usize)
                    .ok_or_else(|| usage(format!("bad outcome {c:?} in {text:?}")))
            })
            .collect::<Result<_>>()?
    };
    if group.len() < 2 {
        return Err(usage(format!("--coarse {text:?} must name at least two outcomes")));
    }
    Ok(group)
}

fn train_settings(t: &TrainArgs, n_outcomes: usize) -> (TrainConfig, SamplingController) {
    let (stage1, stage2) = match (t.loss, t.stage2) {
        (LossName::Euclid, 0) => (LossKind::Euclidean, 0),
        (_, s) => (LossKind::Kl, s),
    };
    let tcfg = TrainConfig {
        max_iters: t.max_iters,
        patience: t.patience,
        stage2_euclid_iters: stage2,
        learning_rate: t.lr,
        seed: t.seed,
        eval_samples: t.eval_samples,
        smoothing_window: t.smoothing_window,
        restarts: t.restarts,
    };
    let mut ctrl = SamplingController::new(stage1, n_outcomes);
    ctrl.bias = t.bias;
    ctrl.bias_max = t.bias_max;
    ctrl.n_min = t.n_min;
    ctrl.n_max = t.n_max;
    ctrl.stagnation_window = t.stagnation_window;
    (tcfg, ctrl)
}

fn quantum_dist(command: &Command, a: &QuantumDistArgs, out_dir: &Path) -> Result<()> {
    let mut manifest = RunManifest::new(command, None);
    let povm = match &a.povm_file {
        Some(p) => parse_povm(&read_input(p, &mut manifest)?)?,
        None => match a.povm {
            PovmName::Rgb4 => {
                if !(0.0..=1.0).contains(&a.u2) {
                    return Err(usage(format!("--u2 {} outside [0, 1]", a.u2)));
                }
                rgb4_povm(a.u2.sqrt())?
            }
            PovmName::Tetra => tetra_joint_measurement(a.mu)?,
            PovmName::Computational => computational_basis_povm(a.dim),
        },
    };
    let config = load_network(&a.network.network, povm.n_outcomes(), &mut manifest)?;
    let wiring = match &a.network.wiring {
        Some(w) => HilbertWiring::parse(w)?,
        None if !is_file_network(&a.network.network) => HilbertWiring::ring(config.n_parties()),
        None if config.n_sources() > 1 => {
            return Err(usage(
                "--wiring is required for a network file with several sources, e.g. --wiring 5,0,1,2,3,4",
            ))
        }
        None => HilbertWiring::identity(config.n_particles()),
    };
    let state: SourceState = match &a.state_file {
        Some(p) => {
            let s = parse_state(&read_input(p, &mut manifest)?)?;
            match (s, a.visibility) {
                (s, v) if v == 1.0 => s,
                (SourceState::Pure(psi), v) => werner(&psi, v)?.into(),
                (SourceState::Mixed(_), _) => {
                    return Err(usage("--visibility needs a pure state file"));
                }
            }
        }
        None => {
            let psi = match a.states {
                StateName::PhiPlus => bell_state(BellKind::PhiPlus),
                StateName::PhiMinus => bell_state(BellKind::PhiMinus),
                StateName::PsiPlus => bell_state(BellKind::PsiPlus),
                StateName::PsiMinus => bell_state(BellKind::PsiMinus),
                StateName::Rotated1 => rotated_state(a.theta, 1)?,
                StateName::Rotated2 => rotated_state(a.theta, 2)?,
            };
            if a.visibility == 1.0 {
                psi.into()
            } else {
                werner(&psi, a.visibility)?.into()
            }
        }
    };
    let sources = vec![state; config.n_sources()];
    let povms = vec![povm; config.n_parties()];
    let mut dist = born_distribution(&config, &sources, &povms, &wiring)?;
    if let Some(c) = &a.coarse {
        let merge = MergeMap::merge_group(dist.indexer().shape(), &parse_group(c)?)?;
        dist = coarse_grain(&dist, &merge)?;
    }
    let mut out = Outputs::new(out_dir, &a.name)?;
    match a.format {
        DistFormat::Json => {
            out.json(".json", &dist.probs())?;
        }
        DistFormat::Csv => {
            let mut w = out.create(".csv")?;
            for p in dist.probs() {
                writeln!(w, "{p}")?;
            }
            w.flush()?;
        }
    }
    println!("{} joint outcomes over shape {:?}", dist.len(), dist.indexer().shape());
    out.finish(manifest)
}

fn fit_cmd(command: &Command, a: &FitArgs, out_dir: &Path) -> Result<()> {
    let mut manifest = RunManifest::new(command, Some(a.train.seed));
    let values = parse_values(&read_input(&a.target, &mut manifest)?)?;
    let config = if is_file_network(&a.network) {
        if a.outcomes.is_some() {
            log::warn!("--outcomes is ignored for network files");
        }
        load_network(&a.network, 0, &mut manifest)?
    } else {
        let n = NetworkConfig::preset(&a.network, 2).expect("preset")?.n_parties();
        let o = match a.outcomes {
            Some(o) => o,
            None => infer_outcomes(values.len(), n)
                .ok_or_else(|| usage(format!("{} entries is not o^{n}; pass --outcomes", values.len())))?,
        };
        load_network(&a.network, o, &mut manifest)?
    };
    let target = Distribution::with_shape(values, config.outcome_shape())
        .with_context(|| format!("target {}", a.target.display()))?;
    let (tcfg, ctrl) = train_settings(&a.train, target.len());
    let (net, mut result) = fit(&config, &target, a.train.width, a.train.depth, &tcfg, &ctrl)?;

    let mut out = Outputs::new(out_dir, &a.name)?;
    let ck_path = out.path(".checkpoint.json");
    result.checkpoint = Some(ck_path.display().to_string());
    Checkpoint::new(&net, &ctrl, &tcfg, &result).save(&ck_path)?;
    out.json(".result.json", &result)?;
    println!(
        "final KL {:.6e}, final Euclidean {:.6e}, best raw loss {:.6e}, {} iterations (restart {})",
        result.final_kl, result.final_euclid, result.best_during_training, result.iterations_run, result.restart
    );
    out.finish(manifest)
}

fn infer_outcomes(len: usize, parties: usize) -> Option<usize> {
    let o = (len as f64).powf(1.0 / parties as f64).round() as usize;
    (o >= 1 && o.checked_pow(parties as u32) == Some(len)).then_some(o)
}

fn ring_network(name: &str) -> Result<(NetworkConfig, Vec<usize>)> {
    let config = NetworkConfig::preset(name, 4)
        .ok_or_else(|| usage(format!("--network {name:?} must be triangle, square or pentagon")))??;
    let wiring = HilbertWiring::ring(config.n_parties()).order().to_vec();
    Ok((config, wiring))
}

fn scan_points(a: &ScanArgs) -> Result<Vec<ScanPoint>> {
    let merge = |shape: &[usize]| -> Result<Option<MergeMap>> {
        a.coarse
            .as_deref()
            .map(|c| Ok(MergeMap::merge_group(shape, &parse_group(c)?)?))
            .transpose()
    };
    Ok(match a.preset {
        Preset::Rgb4UScan => scan::rgb4_points(&parse_grid(&a.u2_grid)?, a.visibility)?,
        Preset::Rgb4Visibility => scan::visibility_points(&Realization::rgb4(a.u2, 1.0)?, &parse_grid(&a.v_grid)?)?,
        Preset::Grid2d => {
            let (config, wiring) = ring_network(&a.network)?;
            let m = merge(&config.outcome_shape())?;
            scan::grid_points(
                &config,
                &wiring,
                &parse_grid(&a.theta_grid)?,
                &parse_grid(&a.mu_grid)?,
                a.family,
                m.as_ref(),
            )?
        }
        Preset::Robustness => {
            let mut base = Realization::rotated(&a.network, a.theta, a.mu, a.family, 1.0)?;
            if let Some(m) = merge(&base.network.outcome_shape())? {
                base = base.with_coarse(&m);
            }
            scan::visibility_points(&base, &parse_grid(&a.v_grid)?)?
        }
    })
}

fn scan_cmd(command: &Command, a: &ScanArgs, out_dir: &Path) -> Result<()> {
    let manifest = RunManifest::new(command, Some(a.train.seed));
    let points = scan_points(a)?;
    let (train, controller) = train_settings(&a.train, 1);
    let settings = ScanSettings {
        width: a.train.width,
        depth: a.train.depth,
        train,
        controller,
        jobs: a.jobs,
    };
    let name = a
        .name
        .clone()
        .unwrap_or_else(|| a.preset.to_possible_value().expect("named").get_name().to_string());
    log::info!("scan {name}: {} points", points.len());
    let output = scan::run_points(&name, &points, &settings)?;

    let mut out = Outputs::new(out_dir, &format!("scan_{name}"))?;
    let mut w = out.create(".csv")?;
    scan::write_csv(&output, &mut w)?;
    w.flush()?;
    out.json(
        ".json",
        &ScanSidecar {
            name: name.clone(),
            settings,
            points,
            failures: output.failures.clone(),
        },
    )?;
    out.finish(manifest)?;
    for f in &output.failures {
        eprintln!("failed point {:?}: {}", f.params, f.error);
    }
    if !output.failures.is_empty() {
        return Err(PartialFailure {
            failed: output.failures.len(),
            total: output.failures.len() + output.results.len(),
        }
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct CalibrationSummary<'a> {
    seed: u64,
    trials: usize,
    outcomes: Vec<usize>,
    samples: Vec<usize>,
    fit: Option<ScalingFit>,
    fit_error: Option<String>,
    report: &'a CalibrationReport,
}

fn calibrate(command: &Command, a: &CalibrateArgs, out_dir: &Path) -> Result<()> {
    let manifest = RunManifest::new(command, Some(a.seed));
    let outcomes = parse_counts(&a.outcomes)?;
    let samples = parse_counts(&a.samples)?;
    if a.trials < 30 {
        return Err(usage(format!("--trials {} is below the minimum of 30", a.trials)));
    }
    let report = sampling_error_study(&outcomes, &samples, a.trials, a.seed)?;
    let (fit, fit_error) = match fit_scalings(&report) {
        Ok(f) => (Some(f), None),
        Err(e) => {
            log::warn!("no scaling fit: {e}");
            (None, Some(e.to_string()))
        }
    };
    if let Some(f) = &fit {
        println!(
            "c_E = {:.4} ± {:.4}, c_K = {:.4} ± {:.4}",
            f.c_euclid, f.c_euclid_ci95, f.c_kl, f.c_kl_ci95
        );
    }
    let mut out = Outputs::new(out_dir, &a.name)?;
    let mut w = out.create(".csv")?;
    report.write_csv(&mut w)?;
    w.flush()?;
    out.json(
        ".json",
        &CalibrationSummary {
            seed: a.seed,
            trials: a.trials,
            outcomes,
            samples,
            fit,
            fit_error,
            report: &report,
        },
    )?;
    out.finish(manifest)
}

fn export(command: &Command, a: &ExportArgs, out_dir: &Path) -> Result<()> {
    let mut manifest = RunManifest::new(command, None);
    manifest.add_input(&a.checkpoint)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let net = ck.to_net()?;
    let parties: Vec<String> = if a.parties.is_empty() {
        net.config()
            .parties()
            .iter()
            .filter(|p| p.sources.len() == 2)
            .map(|p| p.name.clone())
            .collect()
    } else {
        a.parties.clone()
    };
    if parties.is_empty() {
        return Err(anyhow!("no party with two sources to export"));
    }
    let mut out = Outputs::new(out_dir, &a.name)?;
    for party in &parties {
        if net.config().party_index(party).is_none() {
            bail!(UsageError(format!("no party named {party:?} in the checkpoint")));
        }
        let grid = export_strategies(&net, party, a.resolution)?;
        let mut w = out.create(&format!(".{party}.csv"))?;
        grid.write_csv(&mut w)?;
        w.flush()?;
    }
    out.finish(manifest)
}
