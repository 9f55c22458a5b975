//! Acceptance suite. Every criterion runs in order and prints one PASS/FAIL
//! line; the test fails at the end if any criterion failed.
//!
//! `NETLOCAL_ACCEPTANCE=name1,name2` restricts the run to the named
//! criteria. Criteria that depend on the known-local baseline run it first
//! when it was not selected.
//!
//! The four training criteria run full-size fits (60x4, 10^4 iterations,
//! N up to 10^7) and take many CPU hours each. They are reported as SKIP
//! unless `NETLOCAL_ACCEPTANCE_TRAINING=1` is set or they are named in
//! `NETLOCAL_ACCEPTANCE`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{brute_force_mixed, brute_force_pure, max_abs_diff, CM};
use netlocal::calibrate::{
    fit_scalings, random_reference, sampling_error_study, study_reference, CalibrationReport,
};
use netlocal::localmodel::{HiddenSample, LocalModelNet, LossKind, TrainConfig};
use netlocal::quantum::{
    born_distribution, rgb4_povm, rotated_state, tetra_joint_measurement, werner, HilbertWiring,
    MeasurementFamily, Povm, Realization, SourceState, StateFamily,
};
use netlocal::scan::{run_points, ScanPoint, ScanSettings};
use netlocal::topology::{Distribution, NetworkConfig};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { name, pass, detail }
}

fn triangle() -> NetworkConfig {
    NetworkConfig::preset("triangle", 4).unwrap().unwrap()
}

fn effects(p: &Povm) -> Vec<CM> {
    p.effects().to_vec()
}

fn hermitian_spectrum(m: &CM) -> Vec<f64> {
    m.clone().symmetric_eigenvalues().iter().copied().collect()
}

fn born_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let net = triangle();
    let wiring = HilbertWiring::ring(3);
    let mut worst: f64 = 0.0;
    for draw in 0..50 {
        let theta = rng.gen_range(0.0..=PI);
        let mu = rng.gen_range(0.0..=FRAC_PI_2);
        let u = rng.gen_range(0.0..=1.0);
        let family = 1 + (draw % 2) as u8;
        let state = rotated_state(theta, family).unwrap();
        let povms = vec![
            tetra_joint_measurement(mu).unwrap(),
            rgb4_povm(u).unwrap(),
            tetra_joint_measurement(mu).unwrap(),
        ];
        let povm_effects: Vec<Vec<CM>> = povms.iter().map(effects).collect();
        let got = if draw % 5 == 4 {
            let v = rng.gen_range(0.0..=1.0);
            let rho = werner(&state, v).unwrap();
            let sources: Vec<SourceState> = vec![rho.clone().into(); 3];
            let oracle = brute_force_mixed(&vec![(rho.matrix().clone(), vec![2, 2]); 3], &povm_effects, wiring.order());
            (born_distribution(&net, &sources, &povms, &wiring).unwrap(), oracle)
        } else {
            let sources: Vec<SourceState> = vec![state.clone().into(); 3];
            let amps = (state.amplitudes().iter().copied().collect(), vec![2, 2]);
            let oracle = brute_force_pure(&vec![amps; 3], &povm_effects, wiring.order());
            (born_distribution(&net, &sources, &povms, &wiring).unwrap(), oracle)
        };
        worst = worst.max(max_abs_diff(got.0.probs(), &got.1));
    }
    verdict(
        "born-oracle",
        worst <= 1e-10,
        format!("max |born - dense contraction| = {worst:.2e} over 50 draws (tol 1e-10)"),
    )
}

fn povm_deviation(p: &Povm) -> (f64, f64) {
    let d = p.dim();
    let sum = p.effects().iter().fold(CM::zeros(d, d), |acc, e| acc + e);
    let completeness = (sum - CM::identity(d, d)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let min_eig = p
        .effects()
        .iter()
        .flat_map(hermitian_spectrum)
        .fold(f64::INFINITY, f64::min);
    (completeness, min_eig)
}

fn invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for draw in 0..200 {
        match draw % 4 {
            0 => {
                let (c, e) = povm_deviation(&rgb4_povm(rng.gen_range(0.0..=1.0)).unwrap());
                worst = worst.max(c).max(-e);
            }
            1 => {
                let (c, e) = povm_deviation(&tetra_joint_measurement(rng.gen_range(0.0..=FRAC_PI_2)).unwrap());
                worst = worst.max(c).max(-e);
            }
            2 => {
                let s = rotated_state(rng.gen_range(0.0..=PI), rng.gen_range(1..=2)).unwrap();
                let norm: f64 = s.amplitudes().iter().map(|a| a.norm_sqr()).sum();
                worst = worst.max((norm - 1.0).abs());
            }
            _ => {
                let s = rotated_state(rng.gen_range(0.0..=PI), rng.gen_range(1..=2)).unwrap();
                let rho = werner(&s, rng.gen_range(0.0..=1.0)).unwrap();
                let m = rho.matrix();
                let trace = m.trace();
                let herm = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
                let min_eig = rho.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
                worst = worst.max((trace - Complex64::new(1.0, 0.0)).norm()).max(herm).max(-min_eig);
            }
        }
    }
    verdict(
        "povm-state-invariants",
        worst <= 1e-10,
        format!("worst completeness/PSD/norm/trace violation {worst:.2e} over 200 draws (tol 1e-10)"),
    )
}

fn random_target(rng: &mut ChaCha8Rng, n: usize) -> Distribution {
    let p = random_reference(rng, n);
    let s: f64 = p.iter().sum();
    Distribution::with_shape(p.iter().map(|x| x / s).collect(), vec![4, 4, 4]).unwrap()
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = triangle();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let width = rng.gen_range(2..=8);
        let depth = rng.gen_range(1..=2);
        let rows = rng.gen_range(20..=100);
        let kind = if i % 2 == 0 { LossKind::Kl } else { LossKind::Euclidean };
        let mut net = LocalModelNet::init(&config, width, depth, rng.gen()).unwrap();
        // random biases too: zero biases put depth-2 units exactly on the ReLU kink
        for block in net.blocks_mut() {
            block.params_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
        let sample = HiddenSample::draw(&mut rng, rows, config.n_sources());
        let target = random_target(&mut rng, 64);
        let (_, _, grads) = net.loss_and_gradient(&target, &sample, kind).unwrap();
        let loss_at = |net: &LocalModelNet| net.loss_and_gradient(&target, &sample, kind).unwrap().0;
        let (mut diff2, mut norm2) = (0.0, 0.0);
        for b in 0..net.blocks().len() {
            for k in 0..net.blocks()[b].n_params() {
                let x0 = net.blocks()[b].params()[k];
                net.blocks_mut()[b].params_mut()[k] = x0 + h;
                let up = loss_at(&net);
                net.blocks_mut()[b].params_mut()[k] = x0 - h;
                let down = loss_at(&net);
                net.blocks_mut()[b].params_mut()[k] = x0;
                let fd = (up - down) / (2.0 * h);
                diff2 += (grads[b][k] - fd).powi(2);
                norm2 += fd * fd;
            }
        }
        worst = worst.max((diff2 / norm2).sqrt());
    }
    verdict(
        "gradient-check",
        worst < 1e-4,
        format!("worst relative error |g - g_fd| / |g_fd| = {worst:.2e} over 20 nets (tol 1e-4)"),
    )
}

fn variance_identity() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let n_s = 10_000;
    let mut worst_z: f64 = 0.0;
    let mut worst_bound_z = f64::NEG_INFINITY;
    for r in 0..10 {
        let p = random_reference(&mut rng, 64);
        let cell = study_reference(&p, n_s, 1000, 1000 + r);
        worst_z = worst_z.max((cell.euclid_sq_mean - cell.euclid_sq_expected).abs() / cell.euclid_sq_se);
        worst_bound_z = worst_bound_z.max((cell.euclid_sq_mean - cell.euclid_sq_bound) / cell.euclid_sq_se);
    }
    verdict(
        "sampling-variance-identity",
        worst_z <= 3.0 && worst_bound_z <= 3.0,
        format!(
            "N_o=64, N_s={n_s}, 1000 trials x 10 references: worst |mean - Σp(1-p)/N_s| = {worst_z:.2} SE, \
             worst excess over (1-1/N_o)/N_s = {worst_bound_z:.2} SE (tol 3 SE)"
        ),
    )
}

fn slope_at(slopes: &[netlocal::calibrate::SlopeAt], at: usize) -> f64 {
    slopes.iter().find(|s| s.at == at).map(|s| s.slope).unwrap_or(f64::NAN)
}

fn sampling_error_scalings() -> Verdict {
    let report: CalibrationReport =
        sampling_error_study(&[4, 64, 256], &[1_000, 10_000, 100_000, 1_000_000], 200, 2025).unwrap();
    let f = fit_scalings(&report).unwrap();
    let e = slope_at(&f.euclid_vs_samples, 64);
    let k = slope_at(&f.kl_vs_samples, 64);
    let o = slope_at(&f.kl_vs_outcomes, 100_000);
    let checks = [
        (e + 0.5).abs() <= 0.05,
        (k + 1.0).abs() <= 0.05,
        (o - 1.0).abs() <= 0.1,
        (1.0 / 1.5..=1.5).contains(&f.c_euclid),
        (0.5 / 1.5..=0.75).contains(&f.c_kl),
    ];
    let all_e: Vec<String> = f.euclid_vs_samples.iter().map(|s| format!("{:.3}", s.slope)).collect();
    let all_k: Vec<String> = f.kl_vs_samples.iter().map(|s| format!("{:.3}", s.slope)).collect();
    let all_o: Vec<String> = f.kl_vs_outcomes.iter().map(|s| format!("{:.3}", s.slope)).collect();
    verdict(
        "sampling-error-scalings",
        checks.iter().all(|&c| c),
        format!(
            "slopes at N_o=64: Euclid {e:.3} (-0.5±0.05) {}, KL {k:.3} (-1±0.05) {}; KL vs N_o at N_s=1e5 {o:.3} (1±0.1) {}; \
             c_E {:.3} {}, c_K {:.3} {} (within 1.5x of 1 and 1/2); all N_o: Euclid [{}], KL [{}]; all N_s: KL vs N_o [{}]",
            ok(checks[0]),
            ok(checks[1]),
            ok(checks[2]),
            f.c_euclid,
            ok(checks[3]),
            f.c_kl,
            ok(checks[4]),
            all_e.join(", "),
            all_k.join(", "),
            all_o.join(", ")
        ),
    )
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

/// Out-of-the-box training: 60x4 blocks, KL loss, B = 4, 10⁴ iterations,
/// patience 10³.
fn default_settings(seed: u64, restarts: usize) -> ScanSettings {
    ScanSettings {
        train: TrainConfig {
            seed,
            restarts,
            ..TrainConfig::default()
        },
        ..ScanSettings::default()
    }
}

fn rgb4_point(u2: f64, v: f64, coord: u64) -> ScanPoint {
    ScanPoint {
        params: vec![("u2".into(), u2), ("V".into(), v)],
        coords: vec![coord],
        realization: Realization::rgb4(u2, v).unwrap(),
    }
}

struct Baseline {
    euclid: f64,
    kl: f64,
}

/// Final distances of the known-local RGB4 points `u = 1` and `u² = 0.785`.
fn known_local(baseline: &mut Option<Baseline>) -> Verdict {
    let points = [rgb4_point(1.0, 1.0, 0), rgb4_point(0.785, 1.0, 1)];
    let out = run_points("known-local", &points, &default_settings(0, 1)).unwrap();
    let detail: Vec<String> = out
        .results
        .iter()
        .map(|r| {
            format!(
                "u²={}: Euclid {:.3e}, KL {:.3e} ({} iters, {:.0}s)",
                r.params[0].1, r.final_euclid, r.final_kl, r.iterations, r.wall_time_s
            )
        })
        .collect();
    let pass = out.failures.is_empty() && out.results.iter().all(|r| r.final_euclid < 0.01);
    *baseline = Some(Baseline {
        euclid: out.results[0].final_euclid,
        kl: out.results.iter().map(|r| r.final_kl).fold(0.0, f64::max),
    });
    verdict("rgb4-known-local", pass, format!("{} (tol Euclid < 0.01)", detail.join("; ")))
}

fn contrast(baseline: &Baseline) -> Verdict {
    let out = run_points("contrast", &[rgb4_point(0.85, 1.0, 2)], &default_settings(0, 5)).unwrap();
    let d = out.results[0].final_euclid;
    verdict(
        "rgb4-nonlocal-contrast",
        d >= 3.0 * baseline.euclid,
        format!(
            "u²=0.85 best of 5 restarts: Euclid {d:.3e} = {:.2}x the u=1 baseline {:.3e} (need >= 3x)",
            d / baseline.euclid,
            baseline.euclid
        ),
    )
}

/// Local-plateau level in Euclidean distance: twice the worse of the two
/// known-local fits.
fn plateau_euclid(baseline: &Baseline) -> f64 {
    2.0 * baseline.euclid
}

fn visibility_curve(baseline: &Baseline) -> Verdict {
    let vs = [0.80, 0.85, 0.90, 0.95, 0.975, 1.0];
    let points: Vec<ScanPoint> = vs.iter().enumerate().map(|(i, &v)| rgb4_point(0.85, v, 10 + i as u64)).collect();
    let out = run_points("visibility", &points, &default_settings(0, 1)).unwrap();
    let d: Vec<f64> = out.results.iter().map(|r| r.final_euclid).collect();
    let inversions = d.windows(2).filter(|w| w[1] < w[0]).count();
    let plateau = plateau_euclid(baseline);
    let low_flat = d.iter().zip(&vs).filter(|(_, &v)| v < 0.95).all(|(&x, _)| x <= plateau);
    let rises = d[d.len() - 1] > plateau;
    let pass = out.failures.is_empty() && inversions <= 1 && low_flat && rises;
    let curve: Vec<String> = vs.iter().zip(&d).map(|(v, x)| format!("V={v}: {x:.3e}")).collect();
    verdict(
        "visibility-curve-shape",
        pass,
        format!(
            "{}; inversions {inversions} (<= 1) {}, V < 0.95 on plateau <= {plateau:.3e} {}, V=1 above plateau {}",
            curve.join(", "),
            ok(inversions <= 1),
            ok(low_flat),
            ok(rises)
        ),
    )
}

fn grid_spot_checks(baseline: &Baseline) -> Verdict {
    let cells = [(0.0, FRAC_PI_2), (PI, FRAC_PI_2), (FRAC_PI_2, 0.0)];
    let points: Vec<ScanPoint> = cells
        .iter()
        .enumerate()
        .map(|(i, &(theta, mu))| ScanPoint {
            params: vec![("theta".into(), theta), ("mu".into(), mu)],
            coords: vec![20 + i as u64],
            realization: Realization::ring_preset(
                "triangle",
                StateFamily::Rotated { theta, family: 1 },
                MeasurementFamily::Tetra { mu },
                1.0,
            )
            .unwrap(),
        })
        .collect();
    let out = run_points("grid-spots", &points, &default_settings(0, 1)).unwrap();
    let kl: Vec<f64> = out.results.iter().map(|r| r.final_kl).collect();
    let threshold = 2.0 * baseline.kl;
    let pass = out.failures.is_empty() && kl[0] < threshold && kl[1] < threshold && kl[2] >= 3.0 * threshold;
    verdict(
        "triangle-grid-spot-checks",
        pass,
        format!(
            "KL(θ=0, μ=π/2) {:.3e} {}, KL(θ=π, μ=π/2) {:.3e} {}, below plateau {threshold:.3e}; KL(θ=π/2, μ=0) {:.3e} >= 3x plateau {}",
            kl[0],
            ok(kl[0] < threshold),
            kl[1],
            ok(kl[1] < threshold),
            kl[2],
            ok(kl[2] >= 3.0 * threshold)
        ),
    )
}

fn netlocal_cli(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_netlocal"))
        .args(args)
        .current_dir(dir)
        .env("NETLOCAL_OUT_DIR", dir.join("out"))
        .output()
        .expect("binary runs");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn output_with(stdout: &str, suffix: &str) -> String {
    stdout
        .lines()
        .filter_map(|l| l.strip_prefix("wrote ").or_else(|| l.strip_prefix("manifest ")))
        .find(|p| p.ends_with(suffix))
        .unwrap()
        .to_string()
}

fn read_json(dir: &Path, rel: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(rel)).unwrap()).unwrap()
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let dist = netlocal_cli(d, &["quantum-dist", "--u2", "0.85", "--name", "target"]);
    let target = output_with(&dist, ".json");
    let first = netlocal_cli(d, &["fit", "--target", &target, "--max-iters", "300", "--seed", "42"]);
    let manifest = output_with(&first, ".manifest.json");
    let second = netlocal_cli(d, &["replay", &manifest]);
    let a = read_json(d, &output_with(&first, ".result.json"));
    let b = read_json(d, &output_with(&second, ".result.json"));
    let f = |v: &serde_json::Value, k: &str| v[k].as_f64().unwrap();
    // Euclidean sampling floor of the default 10⁶-sample evaluation
    let floor = ((1.0 - 1.0 / 64.0) / 1e6_f64).sqrt();
    let de = (f(&a, "final_euclid") - f(&b, "final_euclid")).abs();
    let best_equal = a["best_during_training"] == b["best_during_training"];
    verdict(
        "determinism",
        de <= floor && best_equal,
        format!(
            "replayed fit: |Δ final Euclid| = {de:.2e} (floor {floor:.2e}), best_during_training {} vs {} ({})",
            a["best_during_training"],
            b["best_during_training"],
            if best_equal { "identical" } else { "DIFFERENT" }
        ),
    )
}

fn timed(f: &mut dyn FnMut() -> Verdict) -> Verdict {
    let t = Instant::now();
    let v = f();
    println!(
        "ACCEPTANCE {} {}: {} [{:.0}s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.name,
        v.detail,
        t.elapsed().as_secs_f64()
    );
    v
}

const TRAINING: [&str; 4] = [
    "rgb4-known-local",
    "rgb4-nonlocal-contrast",
    "visibility-curve-shape",
    "triangle-grid-spot-checks",
];

#[test]
fn acceptance() {
    let only: Option<Vec<String>> = std::env::var("NETLOCAL_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').map(|t| t.trim().to_string()).collect());
    let training = std::env::var("NETLOCAL_ACCEPTANCE_TRAINING").is_ok_and(|v| v == "1");
    let named = |name: &str| only.as_ref().is_some_and(|o| o.iter().any(|n| n == name));
    let wanted = |name: &str| {
        if TRAINING.contains(&name) {
            named(name) || (training && only.is_none())
        } else {
            only.is_none() || named(name)
        }
    };
    let mut verdicts = Vec::new();
    let run = |verdicts: &mut Vec<Verdict>, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if wanted(name) {
            verdicts.push(timed(f));
        }
    };
    run(&mut verdicts, "born-oracle", &mut born_oracle);
    run(&mut verdicts, "povm-state-invariants", &mut invariants);
    run(&mut verdicts, "gradient-check", &mut gradient_check);
    run(&mut verdicts, "sampling-variance-identity", &mut variance_identity);
    run(&mut verdicts, "sampling-error-scalings", &mut sampling_error_scalings);
    run(&mut verdicts, "determinism", &mut determinism);

    let mut baseline = None;
    if TRAINING.iter().any(|n| wanted(n)) {
        verdicts.push(timed(&mut || known_local(&mut baseline)));
    }
    if let Some(b) = &baseline {
        run(&mut verdicts, "rgb4-nonlocal-contrast", &mut || contrast(b));
        run(&mut verdicts, "visibility-curve-shape", &mut || visibility_curve(b));
        run(&mut verdicts, "triangle-grid-spot-checks", &mut || grid_spot_checks(b));
    }
    let skipped: Vec<&str> = if only.is_none() && !training { TRAINING.to_vec() } else { Vec::new() };
    for name in &skipped {
        println!("ACCEPTANCE SKIP {name}: full-size training, set NETLOCAL_ACCEPTANCE_TRAINING=1");
    }

    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.pass).map(|v| v.name).collect();
    println!(
        "ACCEPTANCE SUMMARY: {} passed, {} failed, {} skipped",
        verdicts.len() - failed.len(),
        failed.len(),
        skipped.len()
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
