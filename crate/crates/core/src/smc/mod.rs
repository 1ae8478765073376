//! Priors, weighted particle populations, and the SMC-ABC sampler.

mod engine;
mod prior;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::discrepancy::DistanceConfig;
use crate::error::{Error, Result};
use crate::simulators::ThetaVector;

pub use engine::{emit_posterior, emit_prior, run_smcabc, SmcRun};
pub use prior::{sample_prior, LinearConstraint, PriorSpec, UniformBound};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    pub population_size: usize,
    pub max_generations: usize,
    pub min_epsilon: f64,
    pub epsilon_quantile: f64,
    pub kernel_scale: f64,
    pub distance: DistanceConfig,
    pub max_simulations_per_generation: u64,
    pub master_seed: u64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            population_size: 128,
            max_generations: 12,
            min_epsilon: 0.005,
            epsilon_quantile: 0.5,
            kernel_scale: 2.0,
            distance: DistanceConfig::default(),
            max_simulations_per_generation: 20_000,
            master_seed: 0,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 8 {
            return Err(Error::Config(format!("population_size must be at least 8, got {}", self.population_size)));
        }
        if self.max_generations == 0 {
            return Err(Error::Config("max_generations must be at least 1".into()));
        }
        if !(self.min_epsilon >= 0.0 && self.min_epsilon.is_finite()) {
            return Err(Error::Config(format!("min_epsilon must be finite and non-negative, got {}", self.min_epsilon)));
        }
        if !(self.epsilon_quantile > 0.0 && self.epsilon_quantile < 1.0) {
            return Err(Error::Config(format!("epsilon_quantile must lie in (0, 1), got {}", self.epsilon_quantile)));
        }
        if !(self.kernel_scale > 0.0 && self.kernel_scale.is_finite()) {
            return Err(Error::Config(format!("kernel_scale must be positive, got {}", self.kernel_scale)));
        }
        if self.max_simulations_per_generation < self.population_size as u64 {
            return Err(Error::Config(format!(
                "max_simulations_per_generation ({}) must be at least population_size ({})",
                self.max_simulations_per_generation, self.population_size
            )));
        }
        self.distance.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub theta: ThetaVector,
    pub weight: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub generation: usize,
    pub epsilon: f64,
    pub particles: Vec<Particle>,
    pub ess: f64,
    /// Simulations spent producing this generation.
    pub simulations: u64,
}

impl Population {
    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.particles.first().map_or_else(Vec::new, |p| p.theta.names().map(String::from).collect())
    }

    /// Values of parameter `name` across particles.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        self.particles.iter().map(|p| p.theta.require(name)).collect()
    }

    pub fn record(&self) -> GenerationRecord {
        GenerationRecord {
            generation: self.generation,
            epsilon: self.epsilon,
            ess: self.ess,
            simulations: self.simulations,
        }
    }
}

/// Per-generation facts that do not fit the particle table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub epsilon: f64,
    pub ess: f64,
    pub simulations: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    MinEpsilonReached,
    MaxGenerations,
    BudgetExhausted,
}

impl TerminationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::MinEpsilonReached => "min_epsilon_reached",
            TerminationReason::MaxGenerations => "max_generations",
            TerminationReason::BudgetExhausted => "budget_exhausted",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub populations: Vec<Population>,
    pub simulation_count: u64,
    pub termination: TerminationReason,
}

impl RunResult {
    /// The last sealed population; `None` if generation 0 never filled.
    pub fn final_population(&self) -> Option<&Population> {
        self.populations.last()
    }
}

/// `1 / sum w_i^2` of normalised weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Linear-interpolation quantile of unweighted values.
pub(crate) fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = q * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Weighted posterior summary of one parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q05: f64,
    pub q95: f64,
}

/// Smallest value whose cumulative weight reaches `q`.
fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= q * total {
            return values[i];
        }
    }
    values[*idx.last().expect("nonempty")]
}

pub fn summarize(population: &Population) -> Vec<ParameterSummary> {
    let w = population.weights();
    population
        .parameter_names()
        .into_iter()
        .map(|name| {
            let v = population.column(&name).expect("every particle carries every parameter");
            let mean: f64 = v.iter().zip(&w).map(|(x, w)| x * w).sum();
            let var: f64 = v.iter().zip(&w).map(|(x, w)| w * (x - mean).powi(2)).sum();
            ParameterSummary {
                q05: weighted_quantile(&v, &w, 0.05),
                q95: weighted_quantile(&v, &w, 0.95),
                name,
                mean,
                sd: var.sqrt(),
            }
        })
        .collect()
}

/// One row per particle: `generation,particle_index,weight,distance,<params..>`.
pub fn populations_to_csv(populations: &[Population]) -> String {
    let names = populations.first().map_or_else(Vec::new, Population::parameter_names);
    let mut s = String::from("generation,particle_index,weight,distance");
    for n in &names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for pop in populations {
        for (i, p) in pop.particles.iter().enumerate() {
            let _ = write!(s, "{},{},{},{}", pop.generation, i, p.weight, p.distance);
            for v in p.theta.values() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

/// Inverse of [`populations_to_csv`]; `records` supplies each generation's
/// tolerance and simulation count.
pub fn populations_from_csv(text: &str, records: &[GenerationRecord]) -> Result<Vec<Population>> {
    let bad = |m: String| Error::Config(format!("populations table: {m}"));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
    if header.len() < 4 || header[..4] != ["generation", "particle_index", "weight", "distance"] {
        return Err(bad("unexpected header".into()));
    }
    let names: Vec<String> = header[4..].iter().map(|s| s.to_string()).collect();
    let mut pops: Vec<Population> = Vec::new();
    for (row, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != header.len() {
            return Err(bad(format!("row {} has {} fields, expected {}", row + 1, f.len(), header.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("row {}: `{s}`: {e}", row + 1)));
        let generation: usize = f[0].parse().map_err(|e| bad(format!("row {}: generation: {e}", row + 1)))?;
        let values = f[4..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        let particle = Particle {
            theta: ThetaVector::from_slices(&names, &values)?,
            weight: num(f[2])?,
            distance: num(f[3])?,
        };
        match pops.last_mut() {
            Some(p) if p.generation == generation => p.particles.push(particle),
            _ => {
                if generation != pops.len() {
                    return Err(bad(format!("row {}: generation {generation} out of sequence", row + 1)));
                }
                let rec = records.get(generation).ok_or_else(|| bad(format!("no record for generation {generation}")))?;
                pops.push(Population {
                    generation,
                    epsilon: rec.epsilon,
                    particles: vec![particle],
                    ess: 0.0,
                    simulations: rec.simulations,
                });
            }
        }
    }
    for p in &mut pops {
        p.ess = effective_sample_size(&p.weights());
    }
    Ok(pops)
}
