//! Batch drivers: one trained local model per parameter point, executed on a
//! bounded worker pool with per-point derived seeds.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localmodel::{fit, LossKind, SamplingController, TrainConfig};
use crate::quantum::{MergeMap, Realization};
use crate::seeding::derive_seed;
use crate::topology::NetworkConfig;

/// Training settings shared by all points of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    pub width: usize,
    pub depth: usize,
    pub train: TrainConfig,
    pub controller: SamplingController,
    /// Worker threads; 0 means the global rayon default.
    pub jobs: usize,
}

impl Default for ScanSettings {
    fn default() -> Self {
        ScanSettings {
            width: 60,
            depth: 4,
            train: TrainConfig::default(),
            controller: SamplingController::new(LossKind::Kl, 1),
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// Named parameters in column order, e.g. `[("u2", 0.85)]`.
    pub params: Vec<(String, f64)>,
    /// Grid coordinates; the point's seed is derived from them.
    pub coords: Vec<u64>,
    pub realization: Realization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub params: Vec<(String, f64)>,
    pub coords: Vec<u64>,
    pub final_kl: f64,
    pub final_euclid: f64,
    pub best_raw_loss: f64,
    pub iterations: usize,
    pub seed: u64,
    pub wall_time_s: f64,
    pub end_samples: usize,
}

impl ScanResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFailure {
    pub params: Vec<(String, f64)>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanOutput {
    pub name: String,
    /// Sorted by grid coordinates, whatever the execution order.
    pub results: Vec<ScanResult>,
    pub failures: Vec<ScanFailure>,
}

/// Trains every point. A failing point is recorded, not fatal.
pub fn run_points(name: &str, points: &[ScanPoint], settings: &ScanSettings) -> Result<ScanOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| Error::Domain(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<std::result::Result<ScanResult, ScanFailure>> =
        pool.install(|| points.par_iter().map(|p| run_point(p, settings)).collect());
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    results.sort_by(|a, b| a.coords.cmp(&b.coords));
    Ok(ScanOutput {
        name: name.to_string(),
        results,
        failures,
    })
}

/// Seed of the point at `coords`.
pub fn point_seed(base: u64, coords: &[u64]) -> u64 {
    derive_seed(base, coords)
}

fn run_point(point: &ScanPoint, settings: &ScanSettings) -> std::result::Result<ScanResult, ScanFailure> {
    let start = Instant::now();
    let seed = point_seed(settings.train.seed, &point.coords);
    let attempt = || -> Result<ScanResult> {
        let target = point.realization.target()?;
        let network = point.realization.fitted_network()?;
        let mut tcfg = settings.train.clone();
        tcfg.seed = seed;
        let (_, result) = fit(&network, &target, settings.width, settings.depth, &tcfg, &settings.controller)?;
        Ok(ScanResult {
            params: point.params.clone(),
            coords: point.coords.clone(),
            final_kl: result.final_kl,
            final_euclid: result.final_euclid,
            best_raw_loss: result.best_during_training,
            iterations: result.iterations_run,
            seed,
            wall_time_s: start.elapsed().as_secs_f64(),
            end_samples: result.end_samples,
        })
    };
    let out = attempt().map_err(|e| ScanFailure {
        params: point.params.clone(),
        error: e.to_string(),
    });
    match &out {
        Ok(r) => log::info!(
            "point {:?}: KL {:.3e}, Euclidean {:.3e} in {:.0}s",
            r.params,
            r.final_kl,
            r.final_euclid,
            r.wall_time_s
        ),
        Err(f) => log::warn!("point {:?} failed: {}", f.params, f.error),
    }
    out
}

/// Points of the u² scan on the triangle at visibility `v`.
pub fn rgb4_points(u2_grid: &[f64], v: f64) -> Result<Vec<ScanPoint>> {
    check_range("u2", u2_grid, 0.5, 1.0)?;
    check_range("V", &[v], 0.0, 1.0)?;
    u2_grid
        .iter()
        .enumerate()
        .map(|(i, &u2)| {
            Ok(ScanPoint {
                params: vec![("u2".into(), u2)],
                coords: vec![i as u64],
                realization: Realization::rgb4(u2, v)?,
            })
        })
        .collect()
}

pub fn scan_rgb4(u2_grid: &[f64], v: f64, settings: &ScanSettings) -> Result<ScanOutput> {
    run_points("rgb4-u-scan", &rgb4_points(u2_grid, v)?, settings)
}

/// Points sweeping the Werner visibility of `base` (whose own visibility is
/// ignored).
pub fn visibility_points(base: &Realization, v_grid: &[f64]) -> Result<Vec<ScanPoint>> {
    check_range("V", v_grid, 0.0, 1.0)?;
    Ok(v_grid
        .iter()
        .enumerate()
        .map(|(i, &v)| ScanPoint {
            params: vec![("V".into(), v)],
            coords: vec![i as u64],
            realization: Realization {
                visibility: v,
                ..base.clone()
            },
        })
        .collect())
}

pub fn scan_visibility(base: &Realization, v_grid: &[f64], settings: &ScanSettings) -> Result<ScanOutput> {
    run_points("visibility", &visibility_points(base, v_grid)?, settings)
}

/// `θ x μ` grid of rotated states with tetrahedral measurements on a ring.
pub fn grid_points(
    network: &NetworkConfig,
    wiring: &[usize],
    theta_grid: &[f64],
    mu_grid: &[f64],
    family: u8,
    coarse: Option<&MergeMap>,
) -> Result<Vec<ScanPoint>> {
    if !network.is_ring() {
        return Err(Error::Config {
            location: "network".into(),
            message: "2D scans need a ring network (every party fed by exactly two sources)".into(),
        });
    }
    check_range("theta", theta_grid, 0.0, PI)?;
    check_range("mu", mu_grid, 0.0, PI / 2.0)?;
    let mut points = Vec::with_capacity(theta_grid.len() * mu_grid.len());
    for (i, &theta) in theta_grid.iter().enumerate() {
        for (j, &mu) in mu_grid.iter().enumerate() {
            let mut realization = Realization {
                network: network.with_outcomes(&vec![4; network.n_parties()])?,
                wiring: wiring.to_vec(),
                state: crate::quantum::StateFamily::Rotated { theta, family },
                measurement: crate::quantum::MeasurementFamily::Tetra { mu },
                visibility: 1.0,
                coarse: None,
            };
            if let Some(m) = coarse {
                realization = realization.with_coarse(m);
            }
            points.push(ScanPoint {
                params: vec![("theta".into(), theta), ("mu".into(), mu)],
                coords: vec![i as u64, j as u64],
                realization,
            });
        }
    }
    Ok(points)
}

#[allow(clippy::too_many_arguments)]
pub fn scan_grid_2d(
    network: &NetworkConfig,
    wiring: &[usize],
    theta_grid: &[f64],
    mu_grid: &[f64],
    family: u8,
    coarse: Option<&MergeMap>,
    settings: &ScanSettings,
) -> Result<ScanOutput> {
    let points = grid_points(network, wiring, theta_grid, mu_grid, family, coarse)?;
    run_points("grid2d", &points, settings)
}

/// `|KL(θ) - KL(π - θ)|` for every result whose mirror point at the same μ
/// is present; `None` otherwise. Keyed like `results`.
pub fn theta_symmetry_gaps(results: &[ScanResult]) -> Vec<Option<f64>> {
    let key = |t: f64, m: f64| ((t * 1e9).round() as i64, (m * 1e9).round() as i64);
    let mut by_point = BTreeMap::new();
    for r in results {
        if let (Some(t), Some(m)) = (r.param("theta"), r.param("mu")) {
            by_point.insert(key(t, m), r.final_kl);
        }
    }
    results
        .iter()
        .map(|r| {
            let (t, m) = (r.param("theta")?, r.param("mu")?);
            let mirror = by_point.get(&key(PI - t, m))?;
            Some((r.final_kl - mirror).abs())
        })
        .collect()
}

fn check_range(name: &str, values: &[f64], lo: f64, hi: f64) -> Result<()> {
    match values.iter().find(|v| !(lo..=hi).contains(*v)) {
        Some(v) => Err(Error::Domain(format!("{name} = {v} outside [{lo}, {hi}]"))),
        None if values.is_empty() => Err(Error::Domain(format!("empty {name} grid"))),
        None => Ok(()),
    }
}

/// Writes the result table. Grid scans over `theta` get a trailing
/// `theta_symmetry_gap` column (empty where the mirror point is missing).
pub fn write_csv<W: Write>(output: &ScanOutput, mut out: W) -> Result<()> {
    let names: Vec<String> = match output.results.first() {
        Some(r) => r.params.iter().map(|(n, _)| n.clone()).collect(),
        None => Vec::new(),
    };
    let with_gap = names.iter().any(|n| n == "theta");
    let mut header = names.clone();
    header.extend(
        ["final_kl", "final_euclid", "best_raw_loss", "iterations", "seed", "wall_time_s", "end_samples"]
            .map(String::from),
    );
    if with_gap {
        header.push("theta_symmetry_gap".into());
    }
    writeln!(out, "{}", header.join(","))?;
    let gaps = theta_symmetry_gaps(&output.results);
    for (r, gap) in output.results.iter().zip(gaps) {
        let mut cells: Vec<String> = r.params.iter().map(|(_, v)| format!("{v}")).collect();
        cells.push(format!("{:e}", r.final_kl));
        cells.push(format!("{:e}", r.final_euclid));
        cells.push(format!("{:e}", r.best_raw_loss));
        cells.push(r.iterations.to_string());
        cells.push(r.seed.to_string());
        cells.push(format!("{:.3}", r.wall_time_s));
        cells.push(r.end_samples.to_string());
        if with_gap {
            cells.push(gap.map(|g| format!("{g:e}")).unwrap_or_default());
        }
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// JSON sidecar: full settings, every point's realization, failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanSidecar {
    pub name: String,
    pub settings: ScanSettings,
    pub points: Vec<ScanPoint>,
    pub failures: Vec<ScanFailure>,
}

/// Evenly spaced grid with `n` points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::HilbertWiring;

    fn quick() -> ScanSettings {
        let mut s = ScanSettings {
            width: 4,
            depth: 1,
            ..ScanSettings::default()
        };
        s.train.max_iters = 5;
        s.train.eval_samples = 2_000;
        s.train.seed = 17;
        s.controller.n_max = 2_000;
        s.jobs = 2;
        s
    }

    #[test]
    fn grid_is_order_independent() {
        let net = NetworkConfig::preset("triangle", 4).unwrap().unwrap();
        let wiring = HilbertWiring::ring(3).order().to_vec();
        let points = grid_points(&net, &wiring, &[0.0, PI], &[0.0, PI / 2.0], 1, None).unwrap();
        let all = run_points("g", &points, &quick()).unwrap();
        let mut reversed: Vec<ScanPoint> = points.clone();
        reversed.reverse();
        let mut one = quick();
        one.jobs = 1;
        let a = run_points("g", &reversed[..2], &one).unwrap();
        let b = run_points("g", &reversed[2..], &one).unwrap();
        let mut merged: Vec<ScanResult> = a.results.into_iter().chain(b.results).collect();
        merged.sort_by(|x, y| x.coords.cmp(&y.coords));
        assert_eq!(all.results.len(), 4);
        for (x, y) in all.results.iter().zip(&merged) {
            assert_eq!((x.final_kl, x.final_euclid, x.best_raw_loss, x.seed), (y.final_kl, y.final_euclid, y.best_raw_loss, y.seed));
        }
        let gaps = theta_symmetry_gaps(&all.results);
        assert!(gaps.iter().all(Option::is_some));
    }

    #[test]
    fn csv_layout() {
        let out = scan_rgb4(&[1.0, 0.85], 1.0, &quick()).unwrap();
        let mut buf = Vec::new();
        write_csv(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "u2,final_kl,final_euclid,best_raw_loss,iterations,seed,wall_time_s,end_samples"
        );
        assert_eq!(lines.count(), 2);
        assert_eq!(out.results[0].param("u2"), Some(1.0));
    }

    #[test]
    fn domain_errors() {
        assert!(rgb4_points(&[0.3], 1.0).is_err());
        assert!(rgb4_points(&[0.9], 1.2).is_err());
        assert!(rgb4_points(&[], 1.0).is_err());
        let net = NetworkConfig::parse(r#"{"parties": {"a": {"sources": ["x"], "outcomes": 4}, "b": {"sources": ["x"], "outcomes": 4}}}"#).unwrap();
        assert!(grid_points(&net, &[0, 1], &[0.0], &[0.0], 1, None).is_err());
        let tri = NetworkConfig::preset("triangle", 4).unwrap().unwrap();
        assert!(grid_points(&tri, &[5, 0, 1, 2, 3, 4], &[4.0], &[0.0], 1, None).is_err());
    }

    #[test]
    fn failures_are_collected() {
        let tri = NetworkConfig::preset("triangle", 4).unwrap().unwrap();
        // Wiring of the wrong length fails at target construction.
        let points = grid_points(&tri, &[0, 1, 2], &[0.0], &[0.0], 1, None).unwrap();
        let out = run_points("bad", &points, &quick()).unwrap();
        assert!(out.results.is_empty());
        assert_eq!(out.failures.len(), 1);
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(0.2, 0.2, 1), vec![0.2]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
    }
}
