//! Browser demo over `sbice-core`: a distance curve, a copula sampler, and a
//! small SMC-ABC run. Each export returns JSON; failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use sbice_core::copula::spearman_to_pearson;
use sbice_core::dataset::{Dataset, Standardizer};
use sbice_core::discrepancy::{DistanceConfig, ProjectedReference, Projections};
use sbice_core::dist::{draw, std_normal_cdf, DistributionSpec};
use sbice_core::rng::RandomStream;
use sbice_core::simulators::{catalog_entry, simulate, SimulatorConfig, ThetaVector};
use sbice_core::smc::{run_smcabc, SmcConfig};
use sbice_core::{Error, Result};

const MAX_N: usize = 5000;

fn json<T: Serialize>(r: Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e.to_string()),
    }
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn check_n(n: usize, lo: usize) -> Result<()> {
    if (lo..=MAX_N).contains(&n) {
        Ok(())
    } else {
        Err(Error::Config(format!("n must be in [{lo}, {MAX_N}], got {n}")))
    }
}

/// Linear-Gaussian source with every parameter at its reference value
/// except `tau`.
fn linear_source(tau: f64, n: usize, stream: &RandomStream) -> Result<(SimulatorConfig, ThetaVector, Dataset)> {
    let entry = catalog_entry("dgp1").ok_or_else(|| Error::Config("dgp1 missing from catalog".into()))?;
    let sim = SimulatorConfig::new(entry.variant, n, None)?;
    let theta = with_tau(&entry.reference, tau)?;
    let data = simulate(&sim, &theta, stream)?.dataset;
    Ok((sim, theta, data))
}

fn with_tau(theta: &ThetaVector, tau: f64) -> Result<ThetaVector> {
    ThetaVector::new(theta.pairs().iter().map(|(k, v)| (k.clone(), if k == "tau" { tau } else { *v })).collect())
}

#[derive(Debug, Serialize)]
pub struct DistanceCurve {
    pub tau: Vec<f64>,
    pub distance: Vec<f64>,
    pub tau_true: f64,
}

/// Sliced-Wasserstein distance from a source simulated at `tau_true` to
/// simulations on a grid of `tau` in [0, 3].
pub fn distance_curve(tau_true: f64, n: usize, n_projections: usize, points: usize, seed: u64) -> Result<DistanceCurve> {
    check_n(n, 10)?;
    if !(2..=200).contains(&points) || !(1..=500).contains(&n_projections) {
        return Err(Error::Config("points must be in [2, 200] and projections in [1, 500]".into()));
    }
    let root = RandomStream::new(seed);
    let (sim, theta, source) = linear_source(tau_true, n, &root.derive(&[0]))?;
    let std = Standardizer::fit(&source);
    let projections = Projections::random(source.width(), n_projections, &root.derive(&[1]));
    let reference = ProjectedReference::new(&source, projections, Some(&std), 2)?;
    let tau: Vec<f64> = (0..points).map(|i| 3.0 * i as f64 / (points - 1) as f64).collect();
    let distance = tau
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let d = simulate(&sim, &with_tau(&theta, t)?, &root.derive(&[2, i as u64]))?.dataset;
            reference.distance(&d)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DistanceCurve { tau, distance, tau_true })
}

#[derive(Debug, Serialize)]
pub struct CopulaSample {
    /// Gamma(mean 1, dispersion 1) margin.
    pub x: Vec<f64>,
    /// Student-t(3) margin.
    pub y: Vec<f64>,
    pub spearman_target: f64,
    pub spearman_empirical: f64,
}

/// Two covariates joined by a Gaussian copula with rank correlation
/// `spearman` and deliberately non-normal margins.
pub fn copula_sample(spearman: f64, n: usize, seed: u64) -> Result<CopulaSample> {
    check_n(n, 3)?;
    if !(-0.99..=0.99).contains(&spearman) {
        return Err(Error::Config(format!("spearman must be in [-0.99, 0.99], got {spearman}")));
    }
    let r = spearman_to_pearson(spearman);
    let root = RandomStream::new(seed);
    let e1 = draw(&DistributionSpec::STANDARD_NORMAL, &root.derive(&[0]), n)?;
    let e2 = draw(&DistributionSpec::STANDARD_NORMAL, &root.derive(&[1]), n)?;
    let gamma = DistributionSpec::Gamma { mu: 1.0, phi: 1.0 };
    let t3 = DistributionSpec::StudentT { loc: 0.0, scale: 1.0, df: 3.0 };
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (a, b) in e1.iter().zip(&e2) {
        let z2 = r * a + (1.0 - r * r).sqrt() * b;
        x.push(gamma.quantile(std_normal_cdf(*a))?);
        y.push(t3.quantile(std_normal_cdf(z2))?);
    }
    let spearman_empirical = rank_correlation(&x, &y);
    Ok(CopulaSample {
        x,
        y,
        spearman_target: spearman,
        spearman_empirical,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let m = (ra.len() as f64 - 1.0) / 2.0;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - m) * (y - m)).sum();
    let var: f64 = ra.iter().map(|x| (x - m).powi(2)).sum();
    cov / var
}

#[derive(Debug, Serialize)]
pub struct GenerationSummary {
    pub epsilon: f64,
    pub ess: f64,
    pub simulations: u64,
    pub tau_mean: f64,
    pub tau_sd: f64,
}

#[derive(Debug, Serialize)]
pub struct AbcRun {
    pub tau_true: f64,
    pub generations: Vec<GenerationSummary>,
    pub termination: String,
    pub tau: Vec<f64>,
    pub weights: Vec<f64>,
}

/// SMC-ABC for the linear-Gaussian simulator against a source simulated at
/// `tau_true`, with the other parameters at their reference values.
pub fn abc_run(tau_true: f64, n: usize, population: usize, generations: usize, seed: u64) -> Result<AbcRun> {
    check_n(n, 10)?;
    if !(10..=1000).contains(&population) || !(1..=12).contains(&generations) {
        return Err(Error::Config("population must be in [10, 1000] and generations in [1, 12]".into()));
    }
    let entry = catalog_entry("sim1").ok_or_else(|| Error::Config("sim1 missing from catalog".into()))?;
    let prior = entry.prior.ok_or_else(|| Error::Config("sim1 has no prior".into()))?;
    let root = RandomStream::new(seed);
    let (_, _, source) = linear_source(tau_true, n, &root.derive(&[0]))?;
    let sim = SimulatorConfig::new(entry.variant, n, Some(Arc::new(source.clone())))?;
    let cfg = SmcConfig {
        population_size: population,
        max_generations: generations,
        max_simulations_per_generation: 40 * population as u64,
        distance: DistanceConfig {
            n_projections: 50,
            ..DistanceConfig::default()
        },
        master_seed: root.derive(&[1]).seed_u64(),
        ..SmcConfig::default()
    };
    let result = run_smcabc(&prior, &sim, &source, &cfg)?;
    let mut summaries = Vec::new();
    for p in &result.populations {
        let w = p.weights();
        let tau = p.column("tau")?;
        let mean: f64 = tau.iter().zip(&w).map(|(t, w)| t * w).sum();
        let var: f64 = tau.iter().zip(&w).map(|(t, w)| w * (t - mean).powi(2)).sum();
        summaries.push(GenerationSummary {
            epsilon: p.epsilon,
            ess: p.ess,
            simulations: p.simulations,
            tau_mean: mean,
            tau_sd: var.sqrt(),
        });
    }
    let (tau, weights) = match result.final_population() {
        Some(p) => (p.column("tau")?, p.weights()),
        None => (Vec::new(), Vec::new()),
    };
    Ok(AbcRun {
        tau_true,
        generations: summaries,
        termination: result.termination.as_str().into(),
        tau,
        weights,
    })
}

#[wasm_bindgen(js_name = distanceCurve)]
pub fn distance_curve_json(tau_true: f64, n: usize, n_projections: usize, points: usize, seed: u32) -> String {
    json(distance_curve(tau_true, n, n_projections, points, seed as u64))
}

#[wasm_bindgen(js_name = copulaSample)]
pub fn copula_sample_json(spearman: f64, n: usize, seed: u32) -> String {
    json(copula_sample(spearman, n, seed as u64))
}

#[wasm_bindgen(js_name = abcRun)]
pub fn abc_run_json(tau_true: f64, n: usize, population: usize, generations: usize, seed: u32) -> String {
    json(abc_run(tau_true, n, population, generations, seed as u64))
}
