//! Sampling-error study: how far a multinomial empirical distribution lies
//! from its reference as a function of the sample count and the number of
//! outcomes, and the prefactors of the resulting scaling laws.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Dirichlet, Distribution as _};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding::derive_seed;
use crate::topology::{euclid_slices, kl_slices};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub n_outcomes: usize,
    pub n_samples: usize,
    pub trials: usize,
    pub kl_mean: f64,
    pub kl_se: f64,
    pub euclid_mean: f64,
    pub euclid_se: f64,
    pub euclid_sq_mean: f64,
    pub euclid_sq_se: f64,
    /// `(1/N_s) Σ p (1 - p)` for this cell's reference.
    pub euclid_sq_expected: f64,
    /// `(1 - 1/N_o) / N_s`.
    pub euclid_sq_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub seed: u64,
    pub cells: Vec<CalibrationCell>,
}

/// Draws `N_s` outcomes from `p` and returns the empirical frequencies.
pub fn multinomial_frequencies<R: rand::Rng>(rng: &mut R, p: &[f64], n: usize) -> Vec<f64> {
    let mut remaining = n as u64;
    let mut mass_left = 1.0;
    let mut out = vec![0.0; p.len()];
    for (i, &pi) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let k = if i + 1 == p.len() || mass_left <= pi {
            remaining
        } else {
            let q = (pi / mass_left).clamp(0.0, 1.0);
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        out[i] = k as f64 / n as f64;
        remaining -= k;
        mass_left -= pi;
    }
    out
}

/// Reference drawn uniformly from the probability simplex.
pub fn random_reference<R: rand::Rng>(rng: &mut R, n_outcomes: usize) -> Vec<f64> {
    if n_outcomes == 1 {
        return vec![1.0];
    }
    Dirichlet::new(&vec![1.0; n_outcomes])
        .expect("valid concentration")
        .sample(rng)
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Statistics of `trials` empirical distributions of `n_samples` draws from
/// the fixed reference `p`.
pub fn study_reference(p: &[f64], n_samples: usize, trials: usize, seed: u64) -> CalibrationCell {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kl = Vec::with_capacity(trials);
    let mut eu = Vec::with_capacity(trials);
    let mut eu2 = Vec::with_capacity(trials);
    for _ in 0..trials {
        let q = multinomial_frequencies(&mut rng, p, n_samples);
        let d = euclid_slices(p, &q);
        kl.push(kl_slices(p, &q));
        eu.push(d);
        eu2.push(d * d);
    }
    let (kl_mean, kl_se) = mean_se(&kl);
    let (euclid_mean, euclid_se) = mean_se(&eu);
    let (euclid_sq_mean, euclid_sq_se) = mean_se(&eu2);
    let n_o = p.len();
    CalibrationCell {
        n_outcomes: n_o,
        n_samples,
        trials,
        kl_mean,
        kl_se,
        euclid_mean,
        euclid_se,
        euclid_sq_mean,
        euclid_sq_se,
        euclid_sq_expected: p.iter().map(|x| x * (1.0 - x)).sum::<f64>() / n_samples as f64,
        euclid_sq_bound: (1.0 - 1.0 / n_o as f64) / n_samples as f64,
    }
}

/// One random reference and `trials` empirical distributions per
/// `(N_o, N_s)` cell. Cells run in parallel with derived seeds.
pub fn sampling_error_study(
    outcomes: &[usize],
    samples: &[usize],
    trials: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    if outcomes.is_empty() || samples.is_empty() || trials == 0 {
        return Err(Error::Domain("calibration needs outcome counts, sample counts and trials".into()));
    }
    if outcomes.iter().chain(samples).any(|&v| v == 0) {
        return Err(Error::Domain("outcome and sample counts must be positive".into()));
    }
    if trials < 30 {
        log::warn!("{trials} trials per cell; standard errors will be rough");
    }
    let jobs: Vec<(usize, usize)> = (0..outcomes.len())
        .flat_map(|i| (0..samples.len()).map(move |j| (i, j)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(i, j)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0, i as u64, j as u64]));
            let p = random_reference(&mut rng, outcomes[i]);
            study_reference(&p, samples[j], trials, derive_seed(seed, &[1, i as u64, j as u64]))
        })
        .collect();
    Ok(CalibrationReport { seed, cells })
}

impl CalibrationReport {
    pub const CSV_HEADER: &'static str = "n_outcomes,n_samples,trials,kl_mean,kl_se,euclid_mean,euclid_se,\
euclid_sq_mean,euclid_sq_se,euclid_sq_expected,euclid_sq_bound";

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                c.n_outcomes,
                c.n_samples,
                c.trials,
                c.kl_mean,
                c.kl_se,
                c.euclid_mean,
                c.euclid_se,
                c.euclid_sq_mean,
                c.euclid_sq_se,
                c.euclid_sq_expected,
                c.euclid_sq_bound
            )?;
        }
        Ok(())
    }

    fn distinct(values: impl Iterator<Item = usize>) -> Vec<usize> {
        let mut v: Vec<usize> = values.collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn outcome_counts(&self) -> Vec<usize> {
        Self::distinct(self.cells.iter().map(|c| c.n_outcomes))
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        Self::distinct(self.cells.iter().map(|c| c.n_samples))
    }
}

/// Slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateFit("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(Error::DegenerateFit("all abscissae are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Least-squares `c` in `y = c x` and its 95% confidence half-width.
pub fn prefactor(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::DegenerateFit("need matching, non-empty data".into()));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("all abscissae are zero".into()));
    }
    let c = x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / sxx;
    if x.len() < 2 {
        return Ok((c, f64::INFINITY));
    }
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - c * a).powi(2)).sum();
    let se = (rss / (x.len() - 1) as f64 / sxx).sqrt();
    Ok((c, 1.96 * se))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeAt {
    /// The fixed value of the other axis.
    pub at: usize,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Euclidean error vs `N_s`, one slope per `N_o`.
    pub euclid_vs_samples: Vec<SlopeAt>,
    /// KL error vs `N_s`, one slope per `N_o`.
    pub kl_vs_samples: Vec<SlopeAt>,
    /// KL error vs `N_o`, one slope per `N_s`.
    pub kl_vs_outcomes: Vec<SlopeAt>,
    /// `d = c_E / √N_s`.
    pub c_euclid: f64,
    pub c_euclid_ci95: f64,
    /// `d = c_K N_o / N_s`.
    pub c_kl: f64,
    pub c_kl_ci95: f64,
}

/// Exponents in log space and prefactors in linear space.
pub fn fit_scalings(report: &CalibrationReport) -> Result<ScalingFit> {
    let outcomes = report.outcome_counts();
    let samples = report.sample_counts();
    if samples.len() < 2 {
        return Err(Error::DegenerateFit("need at least two sample counts".into()));
    }
    if outcomes.len() < 4 || samples.len() < 4 {
        log::warn!(
            "scaling fit over {} outcome counts and {} sample counts; four or more per axis recommended",
            outcomes.len(),
            samples.len()
        );
    }
    let cell = |o: usize, s: usize| report.cells.iter().find(|c| c.n_outcomes == o && c.n_samples == s);
    let mut euclid_vs_samples = Vec::new();
    let mut kl_vs_samples = Vec::new();
    for &o in &outcomes {
        let cells: Vec<&CalibrationCell> = samples.iter().filter_map(|&s| cell(o, s)).collect();
        let x: Vec<f64> = cells.iter().map(|c| c.n_samples as f64).collect();
        let e: Vec<f64> = cells.iter().map(|c| c.euclid_mean).collect();
        let k: Vec<f64> = cells.iter().map(|c| c.kl_mean).collect();
        euclid_vs_samples.push(SlopeAt { at: o, slope: loglog_slope(&x, &e)? });
        kl_vs_samples.push(SlopeAt { at: o, slope: loglog_slope(&x, &k)? });
    }
    let mut kl_vs_outcomes = Vec::new();
    if outcomes.len() >= 2 {
        for &s in &samples {
            let cells: Vec<&CalibrationCell> = outcomes.iter().filter_map(|&o| cell(o, s)).collect();
            let x: Vec<f64> = cells.iter().map(|c| c.n_outcomes as f64).collect();
            let k: Vec<f64> = cells.iter().map(|c| c.kl_mean).collect();
            kl_vs_outcomes.push(SlopeAt { at: s, slope: loglog_slope(&x, &k)? });
        }
    }
    let xe: Vec<f64> = report.cells.iter().map(|c| 1.0 / (c.n_samples as f64).sqrt()).collect();
    let ye: Vec<f64> = report.cells.iter().map(|c| c.euclid_mean).collect();
    let xk: Vec<f64> = report
        .cells
        .iter()
        .map(|c| c.n_outcomes as f64 / c.n_samples as f64)
        .collect();
    let yk: Vec<f64> = report.cells.iter().map(|c| c.kl_mean).collect();
    let (c_euclid, c_euclid_ci95) = prefactor(&xe, &ye)?;
    let (c_kl, c_kl_ci95) = prefactor(&xk, &yk)?;
    Ok(ScalingFit {
        euclid_vs_samples,
        kl_vs_samples,
        kl_vs_outcomes,
        c_euclid,
        c_euclid_ci95,
        c_kl,
        c_kl_ci95,
    })
}
