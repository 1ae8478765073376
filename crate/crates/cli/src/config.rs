//! The JSON run configuration and its resolution against the builtin catalog.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sbice_core::dataset::ColumnSchema;
use sbice_core::estimators::{EstimatorId, LearnerConfig};
use sbice_core::evaluation::ClassifierConfig;
use sbice_core::rng::RandomStream;
use sbice_core::simulators::{catalog_entry, CatalogEntry, ExternalConfig, SimulatorVariant, ThetaVector};
use sbice_core::smc::{PriorSpec, SmcConfig};

use crate::error::{CliError, Result};

/// Stream tags under the run's master seed.
pub(crate) mod streams {
    pub const SOURCE: u64 = 1;
    pub const POSTERIOR: u64 = 2;
    pub const PRIOR: u64 = 3;
    pub const CLASSIFIER: u64 = 4;
    pub const LEARNERS: u64 = 5;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// Simulated from a catalog entry, at its reference parameters unless
    /// `theta` is given.
    Builtin {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<ThetaVector>,
        n: usize,
    },
    /// Ingested from a CSV file.
    Csv { path: PathBuf, schema: ColumnSchema },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimulatorSpec {
    Builtin { id: String },
    External(ExternalConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionConfig {
    pub n_datasets: usize,
    /// Rows per emitted dataset; the source size when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_n: Option<usize>,
}

impl Default for EmissionConfig {
    fn default() -> Self {
        Self {
            n_datasets: 50,
            dataset_n: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauStarRule {
    /// Difference in means on the source, valid for randomized sources.
    DiffMeansOfRct,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauStar {
    Value(f64),
    Rule(TauStarRule),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub estimators: Vec<EstimatorId>,
    pub classifier: ClassifierConfig,
    pub learners: LearnerConfig,
    /// Ground-truth source ATE; builtin sources default to their `tau`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source_tau_star: Option<TauStar>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            estimators: EstimatorId::ALL.to_vec(),
            classifier: ClassifierConfig::default(),
            learners: LearnerConfig::default(),
            source_tau_star: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: SourceConfig,
    pub simulator: SimulatorSpec,
    /// Defaults to the catalog prior of a builtin simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<PriorSpec>,
    #[serde(default)]
    pub smc: SmcConfig,
    #[serde(default)]
    pub emission: EmissionConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
}

fn at(path: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {e}"))
}

impl RunConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output_dir = base.join(&cfg.output_dir);
        if let SourceConfig::Csv { path, .. } = &mut cfg.source {
            *path = base.join(&*path);
        }
        if let SimulatorSpec::External(e) = &mut cfg.simulator {
            if let Some(dir) = &mut e.working_dir {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                e.into_inner().to_string()
            } else {
                format!("{path}: {}", e.into_inner())
            }
        })
    }

    /// Fills defaults, derives every seed from `master_seed`, and validates
    /// all sections. Performs no side effects.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = self.clone();
        let source_entry = match &cfg.source {
            SourceConfig::Builtin { id, theta, n } => {
                let entry = builtin(id, "source.id")?;
                if let SimulatorVariant::Linear(m) = &entry.variant {
                    if m.reuses_source_covariates() {
                        return Err(at(
                            "source.id",
                            format!("`{id}` resamples another dataset's covariates and cannot generate a source"),
                        ));
                    }
                }
                if matches!(entry.variant, SimulatorVariant::External(_)) {
                    return Err(at("source.id", "external entries cannot generate a source"));
                }
                if *n < 2 {
                    return Err(at("source.n", format!("must be at least 2, got {n}")));
                }
                if let Some(t) = theta {
                    t.check_names(&entry.parameter_names()).map_err(|e| at("source.theta", e))?;
                }
                Some(entry)
            }
            SourceConfig::Csv { schema, .. } => {
                schema.validate().map_err(|e| at("source.schema", e))?;
                None
            }
        };
        let names = match &cfg.simulator {
            SimulatorSpec::Builtin { id } => {
                let entry = builtin(id, "simulator.id")?;
                if cfg.prior.is_none() {
                    cfg.prior = Some(
                        entry
                            .prior
                            .clone()
                            .ok_or_else(|| at("simulator.id", format!("`{id}` is a source generator, not a simulator")))?,
                    );
                }
                entry.parameter_names()
            }
            SimulatorSpec::External(e) => {
                if e.command.is_empty() {
                    return Err(at("simulator.command", "must name a program"));
                }
                e.schema.validate().map_err(|err| at("simulator.schema", err))?;
                if cfg.prior.is_none() {
                    return Err(at("prior", "required for an external simulator"));
                }
                e.parameter_names.clone()
            }
        };
        let prior = cfg.prior.as_ref().expect("filled above");
        prior.validate().map_err(|e| at("prior", e))?;
        let mut declared = prior.names();
        let mut wanted = names.clone();
        declared.sort();
        wanted.sort();
        if declared != wanted {
            return Err(at("prior", format!("declares {declared:?} but the simulator takes {wanted:?}")));
        }
        let root = RandomStream::new(cfg.master_seed);
        cfg.smc.master_seed = cfg.master_seed;
        cfg.smc.validate().map_err(|e| at("smc", e))?;
        if cfg.emission.n_datasets == 0 {
            return Err(at("emission.n_datasets", "must be at least 1"));
        }
        if matches!(cfg.emission.dataset_n, Some(n) if n < 2) {
            return Err(at("emission.dataset_n", "must be at least 2"));
        }
        let ev = &mut cfg.evaluation;
        if ev.estimators.is_empty() {
            return Err(at("evaluation.estimators", "must list at least one estimator"));
        }
        for (i, id) in ev.estimators.iter().enumerate() {
            if ev.estimators[..i].contains(id) {
                return Err(at("evaluation.estimators", format!("`{id}` is listed twice")));
            }
        }
        ev.classifier.seed = root.derive(&[streams::CLASSIFIER]).seed_u64();
        ev.learners.seed = root.derive(&[streams::LEARNERS]).seed_u64();
        ev.classifier.validate().map_err(|e| at("evaluation.classifier", e))?;
        ev.learners.validate().map_err(|e| at("evaluation.learners", e))?;
        match ev.source_tau_star {
            Some(TauStar::Value(v)) if !v.is_finite() => return Err(at("evaluation.source_tau_star", "must be finite")),
            None => {
                let tau = source_entry.and_then(|e| match &cfg.source {
                    SourceConfig::Builtin { theta: Some(t), .. } => t.get("tau"),
                    _ => e.reference.get("tau"),
                });
                ev.source_tau_star = Some(TauStar::Value(tau.ok_or_else(|| {
                    at(
                        "evaluation.source_tau_star",
                        "required: the source has no known `tau` (give a number or \"diff_means_of_rct\")",
                    )
                })?));
            }
            _ => {}
        }
        if cfg.output_dir.as_os_str().is_empty() {
            return Err(at("output_dir", "must not be empty"));
        }
        Ok(cfg)
    }

    pub fn prior(&self) -> &PriorSpec {
        self.prior.as_ref().expect("resolved configs carry a prior")
    }

    pub fn simulator_variant(&self) -> Result<SimulatorVariant> {
        Ok(match &self.simulator {
            SimulatorSpec::Builtin { id } => builtin(id, "simulator.id")?.variant,
            SimulatorSpec::External(e) => SimulatorVariant::External(e.clone()),
        })
    }
}

fn builtin(id: &str, path: &str) -> Result<CatalogEntry> {
    catalog_entry(id).ok_or_else(|| at(path, format!("unknown builtin `{id}`")))
}
