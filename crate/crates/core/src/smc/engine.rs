//! The population Monte Carlo ABC loop and dataset emission.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{effective_sample_size, quantile, Particle, Population, PriorSpec, RunResult, SmcConfig, TerminationReason};
use crate::dataset::{Dataset, Standardizer};
use crate::discrepancy::{ProjectedReference, Projections};
use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::rng::RandomStream;
use crate::simulators::{GeneratedDataset, Simulator};

/// Stream tag for per-generation projection directions.
const PROJ_TAG: u64 = 0x7072_6f6a;
/// Kernel proposals tried per slot before giving up on the prior support.
const MAX_PROPOSALS: usize = 100_000;

struct Candidate {
    values: Vec<f64>,
    distance: f64,
}

/// Kernel state derived from a sealed population.
struct Kernel {
    free: Vec<usize>,
    sd: Vec<f64>,
    parents: Vec<Vec<f64>>,
    cumulative: Vec<f64>,
    weights: Vec<f64>,
}

impl Kernel {
    fn new(prior: &PriorSpec, pop: &Population, scale: f64) -> Self {
        let parents: Vec<Vec<f64>> = pop.particles.iter().map(|p| prior_values(prior, p)).collect();
        let weights = pop.weights();
        let free = prior.free_indices();
        let sd = free
            .iter()
            .map(|&k| {
                let mean: f64 = parents.iter().zip(&weights).map(|(v, w)| w * v[k]).sum();
                let var: f64 = parents.iter().zip(&weights).map(|(v, w)| w * (v[k] - mean).powi(2)).sum();
                let b = &prior.parameters[k];
                let floor = 1e-6 * (b.hi - b.lo);
                (scale * var).sqrt().max(floor)
            })
            .collect();
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            free,
            sd,
            parents,
            cumulative,
            weights,
        }
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("nonempty population");
        let u = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= u).min(self.parents.len() - 1)
    }

    fn propose<R: Rng + ?Sized>(&self, prior: &PriorSpec, rng: &mut R) -> Result<Vec<f64>> {
        for _ in 0..MAX_PROPOSALS {
            let mut v = self.parents[self.pick(rng)].clone();
            for (&k, s) in self.free.iter().zip(&self.sd) {
                let z: f64 = StandardNormal.sample(rng);
                v[k] += s * z;
            }
            prior.solve_dependent(&mut v);
            if prior.in_box(&v) {
                return Ok(v);
            }
        }
        Err(Error::Config(format!(
            "no kernel proposal landed inside the prior support in {MAX_PROPOSALS} tries"
        )))
    }

    /// Unnormalised `1 / sum_j w_j K(v | parent_j)`, via log-sum-exp.
    fn weight(&self, v: &[f64]) -> f64 {
        let logs: Vec<f64> = self
            .parents
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| {
                let q: f64 = self.free.iter().zip(&self.sd).map(|(&k, s)| ((v[k] - p[k]) / s).powi(2)).sum();
                w.ln() - 0.5 * q
            })
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        (-lse).exp()
    }
}

fn prior_values(prior: &PriorSpec, p: &Particle) -> Vec<f64> {
    prior
        .parameters
        .iter()
        .map(|b| p.theta.get(&b.name).expect("particles carry every prior parameter"))
        .collect()
}

/// A resumable SMC-ABC run: call [`SmcRun::step`] until it returns `None`.
pub struct SmcRun<'a> {
    prior: PriorSpec,
    simulator: &'a dyn Simulator,
    source: &'a Dataset,
    cfg: SmcConfig,
    standardizer: Option<Standardizer>,
    populations: Vec<Population>,
    simulation_count: u64,
    termination: Option<TerminationReason>,
}

impl<'a> SmcRun<'a> {
    pub fn new(prior: PriorSpec, simulator: &'a dyn Simulator, source: &'a Dataset, cfg: SmcConfig) -> Result<Self> {
        Self::resume(prior, simulator, source, cfg, Vec::new(), 0)
    }

    /// Continues from sealed populations, e.g. read back from disk.
    pub fn resume(
        prior: PriorSpec,
        simulator: &'a dyn Simulator,
        source: &'a Dataset,
        cfg: SmcConfig,
        populations: Vec<Population>,
        simulation_count: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        prior.validate()?;
        let mut sim_names = simulator.parameter_names();
        let mut prior_names = prior.names();
        sim_names.sort();
        prior_names.sort();
        if sim_names != prior_names {
            return Err(Error::Config(format!(
                "prior parameters {prior_names:?} do not match simulator parameters {sim_names:?}"
            )));
        }
        for (g, p) in populations.iter().enumerate() {
            if p.generation != g || p.particles.len() != cfg.population_size {
                return Err(Error::Config(format!("stored generation {g} does not match the configured population size")));
            }
        }
        let standardizer = cfg.distance.standardize.then(|| Standardizer::fit(source));
        let mut run = Self {
            prior,
            simulator,
            source,
            cfg,
            standardizer,
            populations,
            simulation_count,
            termination: None,
        };
        run.termination = run.finished();
        Ok(run)
    }

    pub fn populations(&self) -> &[Population] {
        &self.populations
    }

    pub fn simulation_count(&self) -> u64 {
        self.simulation_count
    }

    pub fn termination(&self) -> Option<TerminationReason> {
        self.termination
    }

    fn finished(&self) -> Option<TerminationReason> {
        let last = self.populations.last()?;
        if last.epsilon <= self.cfg.min_epsilon {
            Some(TerminationReason::MinEpsilonReached)
        } else if self.populations.len() >= self.cfg.max_generations {
            Some(TerminationReason::MaxGenerations)
        } else {
            None
        }
    }

    fn reference(&self, generation: usize) -> Result<ProjectedReference> {
        let d = &self.cfg.distance;
        let stream = RandomStream::new(self.cfg.master_seed).derive(&[PROJ_TAG, d.projection_seed, generation as u64]);
        let projections = Projections::random(self.source.width(), d.n_projections, &stream);
        ProjectedReference::new(self.source, projections, self.standardizer.as_ref(), d.order)
    }

    /// Simulates slots `range` of `generation`. Each slot owns the stream
    /// `(master_seed, generation, slot)`.
    fn evaluate(&self, generation: usize, range: std::ops::Range<u64>, kernel: Option<&Kernel>, reference: &ProjectedReference) -> Result<Vec<Candidate>> {
        let root = RandomStream::new(self.cfg.master_seed);
        let start = range.start;
        let out = map_indexed((range.end - start) as usize, |j| -> Result<Candidate> {
            let slot = start + j as u64;
            let stream = root.derive(&[generation as u64, slot]);
            let mut rng = stream.derive(&[0]).rng();
            let values = match kernel {
                None => self.prior.sample_values(&mut rng)?,
                Some(k) => k.propose(&self.prior, &mut rng)?,
            };
            let theta = self.prior.to_theta(&values);
            let generated = self.simulator.simulate(&theta, &stream.derive(&[1])).map_err(|e| Error::Simulation {
                index: slot as usize,
                source: Box::new(e),
            })?;
            let distance = reference.distance(&generated.dataset)?;
            if !distance.is_finite() {
                return Err(Error::Simulation {
                    index: slot as usize,
                    source: Box::new(Error::Domain(format!("distance is {distance}"))),
                });
            }
            Ok(Candidate { values, distance })
        });
        out.into_iter().collect()
    }

    /// Seals the next generation. Returns `None` once the run has ended.
    pub fn step(&mut self) -> Result<Option<&Population>> {
        if self.termination.is_some() {
            return Ok(None);
        }
        let generation = self.populations.len();
        let m = self.cfg.population_size;
        let budget = self.cfg.max_simulations_per_generation;
        let reference = self.reference(generation)?;
        let kernel = self.populations.last().map(|p| Kernel::new(&self.prior, p, self.cfg.kernel_scale));
        let mut spent: u64 = 0;
        let mut evaluated: Vec<Candidate> = Vec::new();
        let epsilon = match self.populations.last() {
            None => {
                let pilot = (2 * m as u64).min(budget);
                evaluated = self.evaluate(generation, 0..pilot, None, &reference)?;
                spent = pilot;
                let d: Vec<f64> = evaluated.iter().map(|c| c.distance).collect();
                quantile(&d, self.cfg.epsilon_quantile).max(self.cfg.min_epsilon)
            }
            Some(prev) => {
                let d: Vec<f64> = prev.particles.iter().map(|p| p.distance).collect();
                quantile(&d, self.cfg.epsilon_quantile).max(self.cfg.min_epsilon)
            }
        };
        let mut accepted: Vec<Candidate> = Vec::new();
        let drain = |batch: Vec<Candidate>, accepted: &mut Vec<Candidate>| {
            for c in batch {
                if accepted.len() < m && c.distance < epsilon {
                    accepted.push(c);
                }
            }
        };
        drain(std::mem::take(&mut evaluated), &mut accepted);
        while accepted.len() < m && spent < budget {
            let needed = (m - accepted.len()) as f64;
            let rate = if spent > 0 && !accepted.is_empty() {
                accepted.len() as f64 / spent as f64
            } else if spent > 0 {
                1.0 / spent as f64
            } else {
                0.5
            };
            let batch = ((needed / rate.max(0.01) * 1.1).ceil() as u64).clamp(needed as u64, budget - spent);
            let cands = self.evaluate(generation, spent..spent + batch, kernel.as_ref(), &reference)?;
            spent += batch;
            drain(cands, &mut accepted);
        }
        self.simulation_count += spent;
        if accepted.len() < m {
            self.termination = Some(TerminationReason::BudgetExhausted);
            return Ok(None);
        }
        let raw: Vec<f64> = match &kernel {
            None => vec![1.0; m],
            Some(k) => accepted.iter().map(|c| k.weight(&c.values)).collect(),
        };
        let total: f64 = raw.iter().sum();
        let particles: Vec<Particle> = accepted
            .iter()
            .zip(&raw)
            .map(|(c, w)| Particle {
                theta: self.prior.to_theta(&c.values),
                weight: w / total,
                distance: c.distance,
            })
            .collect();
        let ess = effective_sample_size(&particles.iter().map(|p| p.weight).collect::<Vec<_>>());
        self.populations.push(Population {
            generation,
            epsilon,
            particles,
            ess,
            simulations: spent,
        });
        self.termination = self.finished();
        Ok(self.populations.last())
    }

    pub fn run(mut self) -> Result<RunResult> {
        while self.step()?.is_some() {}
        Ok(self.into_result())
    }

    pub fn into_result(self) -> RunResult {
        RunResult {
            populations: self.populations,
            simulation_count: self.simulation_count,
            termination: self.termination.unwrap_or(TerminationReason::MaxGenerations),
        }
    }
}

/// SMC-ABC from the prior to the final tolerance.
pub fn run_smcabc(prior: &PriorSpec, simulator: &dyn Simulator, source: &Dataset, cfg: &SmcConfig) -> Result<RunResult> {
    SmcRun::new(prior.clone(), simulator, source, cfg.clone())?.run()
}

fn emit<F>(count: usize, simulator: &dyn Simulator, stream: &RandomStream, draw: F) -> Result<Vec<GeneratedDataset>>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<crate::simulators::ThetaVector> + Sync,
{
    if count == 0 {
        return Err(Error::Config("dataset count must be at least 1".into()));
    }
    let out = map_indexed(count, |i| {
        let s = stream.derive(&[i as u64]);
        let wrap = |e| Error::Simulation { index: i, source: Box::new(e) };
        let theta = draw(&mut s.derive(&[0]).rng()).map_err(wrap)?;
        simulator.simulate(&theta, &s.derive(&[1])).map_err(wrap)
    });
    out.into_iter().collect()
}

/// `count` datasets at parameters resampled by weight from `population`.
pub fn emit_posterior(population: &Population, simulator: &dyn Simulator, count: usize, stream: &RandomStream) -> Result<Vec<GeneratedDataset>> {
    let mut acc = 0.0;
    let cumulative: Vec<f64> = population
        .particles
        .iter()
        .map(|p| {
            acc += p.weight;
            acc
        })
        .collect();
    if cumulative.is_empty() {
        return Err(Error::Config("cannot emit from an empty population".into()));
    }
    emit(count, simulator, stream, |rng| {
        let u = rng.random::<f64>() * acc;
        let k = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
        Ok(population.particles[k].theta.clone())
    })
}

/// `count` datasets at parameters drawn from the prior.
pub fn emit_prior(prior: &PriorSpec, simulator: &dyn Simulator, count: usize, stream: &RandomStream) -> Result<Vec<GeneratedDataset>> {
    prior.validate()?;
    emit(count, simulator, stream, |rng| Ok(prior.to_theta(&prior.sample_values(rng)?)))
}
