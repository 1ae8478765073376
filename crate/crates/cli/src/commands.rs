//! The pipeline stages behind each subcommand.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use sbice_core::dataset::{read_csv, ColumnSchema, Dataset};
use sbice_core::estimators::{estimate_ate, EstimatorId, LearnerConfig};
use sbice_core::evaluation::{bse_report, classifier_auc, AucReport, BseReport, ClassifierConfig};
use sbice_core::rng::RandomStream;
use sbice_core::simulators::{catalog_entry, simulate, GeneratedDataset, SimulatorConfig, ThetaVector};
use sbice_core::smc::{emit_posterior, emit_prior, populations_from_csv, populations_to_csv, summarize, Population, SmcRun};

use crate::config::{streams, RunConfig, SourceConfig, TauStar, TauStarRule};
use crate::error::{CliError, Result};
use crate::rundir::{self, DatasetsRecord, EvaluationRecord, InferenceRecord, Regime, RunDir, SourceRecord};

/// Where progress lines go.
pub type Log<'a> = &'a dyn Fn(&str);

pub fn quiet(_: &str) {}

fn missing(what: &str, cfg: &RunConfig, command: &str) -> CliError {
    CliError::Config(format!("{what} not found in {}; run `sbice {command}` first", cfg.output_dir.display()))
}

fn load_source(dir: &RunDir) -> Result<Arc<Dataset>> {
    let rec = dir
        .manifest
        .source
        .as_ref()
        .ok_or_else(|| missing(rundir::SOURCE, &dir.manifest.config, "simulate"))?;
    Ok(Arc::new(read_csv(&dir.path(rundir::SOURCE), &rec.schema)?))
}

fn simulator(cfg: &RunConfig, source: &Arc<Dataset>, n: usize) -> Result<SimulatorConfig> {
    Ok(SimulatorConfig::new(cfg.simulator_variant()?, n, Some(Arc::clone(source)))?)
}

/// Writes `source.csv`, simulated from a builtin entry or validated from a
/// user CSV.
pub fn cmd_simulate(config: &RunConfig, log: Log) -> Result<()> {
    let cfg = config.resolve()?;
    let (dataset, theta) = match &cfg.source {
        SourceConfig::Builtin { id, theta, n } => {
            let entry = catalog_entry(id).expect("resolved ids exist");
            let theta = theta.clone().unwrap_or(entry.reference);
            let sim = SimulatorConfig::new(entry.variant, *n, None)?;
            let stream = RandomStream::new(cfg.master_seed).derive(&[streams::SOURCE]);
            (simulate(&sim, &theta, &stream)?.dataset, Some(theta))
        }
        SourceConfig::Csv { path, schema } => {
            let d = read_csv(path, schema).map_err(|e| CliError::Config(format!("source.path: {e}")))?;
            (d, None)
        }
    };
    let mut dir = RunDir::open(&cfg)?;
    dir.write(rundir::SOURCE, dataset.to_csv_string().as_bytes())?;
    dir.manifest.source = Some(SourceRecord {
        n: dataset.n(),
        schema: dataset.schema(),
        theta,
    });
    dir.save()?;
    log(&format!(
        "source: {} rows, {} covariates -> {}",
        dataset.n(),
        dataset.p(),
        dir.path(rundir::SOURCE).display()
    ));
    Ok(())
}

/// Runs SMC-ABC, sealing `populations.csv` after every generation.
pub fn cmd_infer(config: &RunConfig, resume: bool, log: Log) -> Result<()> {
    let cfg = config.resolve()?;
    if !cfg.output_dir.join(rundir::SOURCE).exists() {
        return Err(missing(rundir::SOURCE, &cfg, "simulate"));
    }
    let mut dir = RunDir::open(&cfg)?;
    let source = load_source(&dir)?;
    let sim = simulator(&cfg, &source, source.n())?;
    let (populations, count) = match (&dir.manifest.inference, resume) {
        (Some(rec), true) if rec.complete => {
            log("inference already complete; nothing to resume");
            return Ok(());
        }
        (Some(rec), true) if !rec.generations.is_empty() => {
            let text = dir.read_to_string(rundir::POPULATIONS)?;
            let pops = populations_from_csv(&text, &rec.generations)?;
            log(&format!("resuming after generation {}", pops.len() - 1));
            (pops, rec.generations.iter().map(|g| g.simulations).sum())
        }
        _ => (Vec::new(), 0),
    };
    if populations.is_empty() {
        for stale in [rundir::POPULATIONS, "datasets/posterior", rundir::METRICS, rundir::PLOTS, rundir::SUMMARY] {
            dir.remove_prefix(stale)?;
        }
        dir.manifest.datasets.remove(&Regime::Posterior);
        dir.manifest.evaluation = None;
    }
    let mut record = InferenceRecord {
        complete: false,
        generations: populations.iter().map(Population::record).collect(),
        simulation_count: count,
        termination: None,
        distance_standardized: cfg.smc.distance.standardize,
    };
    dir.manifest.inference = Some(record.clone());
    dir.save()?;
    let mut run = SmcRun::resume(cfg.prior().clone(), &sim, &source, cfg.smc.clone(), populations, count)?;
    loop {
        let sealed = run.step().map(|s| s.map(Population::record));
        record.simulation_count = run.simulation_count();
        let sealed = match sealed {
            Ok(s) => s,
            Err(e) => {
                dir.manifest.inference = Some(record);
                dir.save()?;
                return Err(e.into());
            }
        };
        let Some(gen) = sealed else { break };
        log(&format!(
            "generation {}: epsilon {:.5}, ess {:.1}, {} simulations",
            gen.generation, gen.epsilon, gen.ess, gen.simulations
        ));
        dir.write(rundir::POPULATIONS, populations_to_csv(run.populations()).as_bytes())?;
        record.generations.push(gen);
        dir.manifest.inference = Some(record.clone());
        dir.save()?;
    }
    record.termination = run.termination();
    record.complete = true;
    log(&format!(
        "terminated: {} after {} generations, {} simulations",
        record.termination.map_or("", |t| t.as_str()),
        record.generations.len(),
        record.simulation_count
    ));
    dir.manifest.inference = Some(record);
    dir.save()
}

fn final_population(dir: &RunDir) -> Result<Option<Population>> {
    let Some(rec) = &dir.manifest.inference else { return Ok(None) };
    if !rec.complete {
        return Ok(None);
    }
    let pops = populations_from_csv(&dir.read_to_string(rundir::POPULATIONS).unwrap_or_default(), &rec.generations)?;
    Ok(pops.into_iter().last())
}

fn thetas_csv(datasets: &[GeneratedDataset], names: &[String]) -> String {
    let mut s = String::from("dataset_index");
    for n in names {
        let _ = write!(s, ",{n}");
    }
    s.push_str(",tau_star\n");
    for (i, g) in datasets.iter().enumerate() {
        let _ = write!(s, "{i}");
        for n in names {
            let _ = write!(s, ",{}", g.theta.get(n).expect("emitted thetas carry every parameter"));
        }
        if g.tau_star.is_finite() {
            let _ = writeln!(s, ",{}", g.tau_star);
        } else {
            s.push_str(",\n");
        }
    }
    s
}

/// Emits `datasets/<regime>/dataset_<i>.csv` and `thetas.csv`.
pub fn cmd_generate(config: &RunConfig, regimes: &[Regime], log: Log) -> Result<()> {
    let cfg = config.resolve()?;
    if !cfg.output_dir.join(rundir::SOURCE).exists() {
        return Err(missing(rundir::SOURCE, &cfg, "simulate"));
    }
    let mut dir = RunDir::open(&cfg)?;
    let source = load_source(&dir)?;
    let n = cfg.emission.dataset_n.unwrap_or(source.n());
    let count = cfg.emission.n_datasets;
    let sim = simulator(&cfg, &source, n)?;
    let root = RandomStream::new(cfg.master_seed);
    let names = cfg.prior().names();
    for &regime in regimes {
        let datasets = match regime {
            Regime::Posterior => {
                let pop = final_population(&dir)?.ok_or_else(|| {
                    CliError::Config(format!(
                        "no completed inference with a sealed generation in {}; run `sbice infer` first",
                        cfg.output_dir.display()
                    ))
                })?;
                emit_posterior(&pop, &sim, count, &root.derive(&[streams::POSTERIOR]))?
            }
            Regime::Prior => emit_prior(cfg.prior(), &sim, count, &root.derive(&[streams::PRIOR]))?,
        };
        dir.remove_prefix(&regime.dir())?;
        dir.manifest.evaluation = None;
        let mut record = DatasetsRecord {
            complete: false,
            count,
            n,
            schema: datasets[0].dataset.schema(),
            parameters: names.clone(),
        };
        dir.manifest.datasets.insert(regime, record.clone());
        dir.save()?;
        for (i, g) in datasets.iter().enumerate() {
            dir.write(&regime.dataset_file(i), g.dataset.to_csv_string().as_bytes())?;
        }
        dir.write(&regime.thetas_file(), thetas_csv(&datasets, &names).as_bytes())?;
        record.complete = true;
        dir.manifest.datasets.insert(regime, record);
        dir.save()?;
        log(&format!(
            "{}: {count} datasets of {n} rows -> {}",
            regime.as_str(),
            dir.path(&regime.dir()).display()
        ));
    }
    Ok(())
}

fn load_regime(dir: &RunDir, regime: Regime) -> Result<Vec<GeneratedDataset>> {
    let rec = dir.manifest.datasets.get(&regime).filter(|r| r.complete).ok_or_else(|| {
        CliError::Config(format!(
            "{} datasets not found in {}; run `sbice generate --regime {}` first",
            regime.as_str(),
            dir.root().display(),
            regime.as_str()
        ))
    })?;
    let text = dir.read_to_string(&regime.thetas_file())?;
    let thetas_path = dir.path(&regime.thetas_file());
    let mut thetas = Vec::with_capacity(rec.count);
    for (row, line) in text.lines().skip(1).enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let values = rec
            .parameters
            .iter()
            .enumerate()
            .map(|(j, _)| cells.get(j + 1).and_then(|c| c.parse::<f64>().ok()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| sbice_core::Error::CsvRow {
                path: thetas_path.clone(),
                row: row + 1,
                message: "malformed parameter cell".into(),
            })?;
        thetas.push(ThetaVector::from_slices(&rec.parameters, &values)?);
    }
    if thetas.len() != rec.count {
        return Err(CliError::Config(format!(
            "{} lists {} rows, expected {}",
            thetas_path.display(),
            thetas.len(),
            rec.count
        )));
    }
    thetas
        .into_iter()
        .enumerate()
        .map(|(i, theta)| Ok(GeneratedDataset::new(read_csv(&dir.path(&regime.dataset_file(i)), &rec.schema)?, theta)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeAuc {
    pub posterior: AucReport,
    pub prior: AucReport,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeCounts {
    pub posterior: usize,
    pub prior: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    /// Mean BSE; `None` when every estimate in the regime failed.
    pub posterior: Option<f64>,
    pub prior: Option<f64>,
    pub n_failed: RegimeCounts,
    pub source_bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub estimators: Vec<EstimatorId>,
    pub classifier: ClassifierConfig,
    pub learners: LearnerConfig,
    pub classifier_columns: String,
    pub n_datasets: RegimeCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auc: RegimeAuc,
    /// Keyed by estimator id.
    pub bse: BTreeMap<String, EstimatorMetrics>,
    pub source_tau_star: f64,
    pub config: MetricsConfig,
}

impl Metrics {
    pub fn estimator(&self, id: EstimatorId) -> Option<&EstimatorMetrics> {
        self.bse.get(id.as_str())
    }

    /// Estimators whose posterior Mean BSE is strictly below the prior one.
    pub fn bse_improvements(&self) -> usize {
        self.bse
            .values()
            .filter(|m| matches!((m.posterior, m.prior), (Some(a), Some(b)) if a < b))
            .count()
    }
}

const CLASSIFIER_COLUMNS: &str = "all";

fn bias_long_csv(report: &BseReport) -> String {
    let cell = |b: Option<f64>| b.map_or(String::new(), |v| v.to_string());
    let mut s = String::from("regime,estimator,dataset_index,bias\n");
    for e in &report.entries {
        let _ = writeln!(s, "source,{},0,{}", e.estimator, cell(e.source_bias));
    }
    for (name, pick) in [("posterior", true), ("prior", false)] {
        for e in &report.entries {
            let summary = if pick { &e.posterior } else { &e.prior };
            for (i, b) in summary.biases.iter().enumerate() {
                let _ = writeln!(s, "{name},{},{i},{}", e.estimator, cell(*b));
            }
        }
    }
    s
}

fn posterior_samples_csv(pop: &Population) -> String {
    let names = pop.parameter_names();
    let mut s = names.join(",");
    s.push_str(",weight\n");
    for p in &pop.particles {
        for n in &names {
            let _ = write!(s, "{},", p.theta.get(n).expect("particles carry every parameter"));
        }
        let _ = writeln!(s, "{}", p.weight);
    }
    s
}

fn source_tau_star(cfg: &RunConfig, source: &Dataset) -> Result<f64> {
    match cfg.evaluation.source_tau_star.expect("resolved") {
        TauStar::Value(v) => Ok(v),
        TauStar::Rule(TauStarRule::DiffMeansOfRct) => {
            let est = estimate_ate(source, EstimatorId::DiffMeans, &cfg.evaluation.learners);
            est.value.ok_or_else(|| {
                CliError::Config(format!(
                    "evaluation.source_tau_star: difference in means failed on the source: {}",
                    est.failure.unwrap_or_default()
                ))
            })
        }
    }
}

/// Classifier AUC and Mean BSE for both regimes; writes `metrics.json` and
/// the plot-data CSVs.
pub fn cmd_evaluate(config: &RunConfig, log: Log) -> Result<Metrics> {
    let cfg = config.resolve()?;
    if !cfg.output_dir.join(rundir::MANIFEST).exists() {
        return Err(missing("datasets", &cfg, "generate"));
    }
    let mut dir = RunDir::open(&cfg)?;
    let source = load_source(&dir)?;
    let posterior = load_regime(&dir, Regime::Posterior)?;
    let prior = load_regime(&dir, Regime::Prior)?;
    let tau_star = source_tau_star(&cfg, &source)?;
    let ev = &cfg.evaluation;
    log(&format!("classifier AUC over {} + {} datasets", posterior.len(), prior.len()));
    let auc = RegimeAuc {
        posterior: classifier_auc(&posterior, &source, &ev.classifier)?,
        prior: classifier_auc(&prior, &source, &ev.classifier)?,
    };
    log(&format!(
        "estimators: {}",
        ev.estimators.iter().map(|e| e.as_str()).collect::<Vec<_>>().join(", ")
    ));
    let report = bse_report(&source, tau_star, &posterior, &prior, &ev.estimators, &ev.learners)?;
    let bse = report
        .entries
        .iter()
        .map(|e| {
            (
                e.estimator.to_string(),
                EstimatorMetrics {
                    posterior: e.posterior.mean_bse,
                    prior: e.prior.mean_bse,
                    n_failed: RegimeCounts {
                        posterior: e.posterior.n_failed,
                        prior: e.prior.n_failed,
                    },
                    source_bias: e.source_bias,
                    source_failure: e.source_failure.clone(),
                },
            )
        })
        .collect();
    let metrics = Metrics {
        auc,
        bse,
        source_tau_star: tau_star,
        config: MetricsConfig {
            estimators: ev.estimators.clone(),
            classifier: ev.classifier.clone(),
            learners: ev.learners.clone(),
            classifier_columns: CLASSIFIER_COLUMNS.into(),
            n_datasets: RegimeCounts {
                posterior: posterior.len(),
                prior: prior.len(),
            },
        },
    };
    dir.manifest.evaluation = Some(EvaluationRecord {
        complete: false,
        source_tau_star: Some(tau_star),
        classifier_columns: CLASSIFIER_COLUMNS.into(),
    });
    dir.save()?;
    dir.write(rundir::METRICS, rundir::to_json(&metrics).as_bytes())?;
    dir.write(rundir::BIAS_LONG, bias_long_csv(&report).as_bytes())?;
    if let Some(pop) = final_population(&dir)? {
        dir.write(rundir::POSTERIOR_SAMPLES, posterior_samples_csv(&pop).as_bytes())?;
    }
    if let Some(e) = &mut dir.manifest.evaluation {
        e.complete = true;
    }
    dir.save()?;
    log(&format!(
        "AUC posterior {:.3}, prior {:.3}; posterior BSE below prior for {} of {} estimators",
        metrics.auc.posterior.mean,
        metrics.auc.prior.mean,
        metrics.bse_improvements(),
        metrics.bse.len()
    ));
    Ok(metrics)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn schema_line(schema: &ColumnSchema) -> String {
    format!(
        "covariates {}, treatment `{}`, outcome `{}`",
        schema.covariate_columns.join(", "),
        schema.treatment_column,
        schema.outcome_column
    )
}

/// Writes `summary.md` from the manifest, populations, and metrics.
pub fn cmd_report(config: &RunConfig, log: Log) -> Result<String> {
    let cfg = config.resolve()?;
    let metrics_path = cfg.output_dir.join(rundir::METRICS);
    if !metrics_path.exists() {
        return Err(CliError::Config(format!(
            "{} not found; run `sbice evaluate` with this config first",
            metrics_path.display()
        )));
    }
    let mut dir = RunDir::open(&cfg)?;
    let metrics: Metrics = rundir::read_json(&metrics_path)?;
    let m = &dir.manifest;
    let mut s = String::from("# SBICE run summary\n\n");
    let source = match &cfg.source {
        SourceConfig::Builtin { id, .. } => format!("builtin `{id}`"),
        SourceConfig::Csv { path, .. } => format!("`{}`", path.display()),
    };
    let simulator = match &cfg.simulator {
        crate::config::SimulatorSpec::Builtin { id } => format!("builtin `{id}`"),
        crate::config::SimulatorSpec::External(e) => format!("external `{}`", e.command.join(" ")),
    };
    let _ = writeln!(s, "- Source: {source}");
    if let Some(src) = &m.source {
        let _ = writeln!(s, "- Source data: {} rows; {}", src.n, schema_line(&src.schema));
        if let Some(t) = &src.theta {
            let pairs: Vec<String> = t.pairs().iter().map(|(k, v)| format!("{k} = {v}")).collect();
            let _ = writeln!(s, "- Source parameters: {}", pairs.join(", "));
        }
    }
    let _ = writeln!(s, "- Simulator: {simulator}");
    let _ = writeln!(s, "- Master seed: {}", cfg.master_seed);
    let _ = writeln!(s, "- Source tau*: {}", metrics.source_tau_star);
    if let Some(inf) = &m.inference {
        let _ = writeln!(
            s,
            "- Inference: {} generations, {} simulations, termination `{}`",
            inf.generations.len(),
            inf.simulation_count,
            inf.termination.map_or("incomplete", |t| t.as_str())
        );
        s.push_str("\n## Tolerance schedule\n\n| generation | epsilon | ESS | simulations |\n|---|---|---|---|\n");
        for g in &inf.generations {
            let _ = writeln!(s, "| {} | {:.5} | {:.1} | {} |", g.generation, g.epsilon, g.ess, g.simulations);
        }
    }
    if let Some(pop) = final_population(&dir)? {
        s.push_str("\n## Posterior parameters\n\n| parameter | mean | sd | q05 | q95 |\n|---|---|---|---|---|\n");
        for p in summarize(&pop) {
            let _ = writeln!(s, "| {} | {:.4} | {:.4} | {:.4} | {:.4} |", p.name, p.mean, p.sd, p.q05, p.q95);
        }
    }
    s.push_str("\n## Classifier AUC (0.5 = indistinguishable from the source)\n\n| regime | mean | sd | datasets |\n|---|---|---|---|\n");
    for (name, a) in [("posterior", &metrics.auc.posterior), ("prior", &metrics.auc.prior)] {
        let _ = writeln!(s, "| {name} | {:.4} | {:.4} | {} |", a.mean, a.sd, a.per_dataset.len());
    }
    s.push_str("\n## Mean BSE per estimator\n\n| estimator | posterior | prior | failed (post/prior) | source bias |\n|---|---|---|---|---|\n");
    for id in &metrics.config.estimators {
        if let Some(e) = metrics.estimator(*id) {
            let _ = writeln!(
                s,
                "| {id} | {} | {} | {}/{} | {} |",
                fmt_opt(e.posterior),
                fmt_opt(e.prior),
                e.n_failed.posterior,
                e.n_failed.prior,
                fmt_opt(e.source_bias)
            );
        }
    }
    let _ = writeln!(
        s,
        "\nPosterior Mean BSE is below the prior's for {} of {} estimators.",
        metrics.bse_improvements(),
        metrics.bse.len()
    );
    dir.write(rundir::SUMMARY, s.as_bytes())?;
    dir.save()?;
    log(&format!("summary -> {}", dir.path(rundir::SUMMARY).display()));
    Ok(s)
}

/// Every stage in order.
pub fn cmd_run(config: &RunConfig, resume: bool, log: Log) -> Result<Metrics> {
    let cfg = config.resolve()?;
    let done = |p: &str| cfg.output_dir.join(p).exists();
    if !(resume && done(rundir::SOURCE)) {
        cmd_simulate(&cfg, log)?;
    }
    cmd_infer(&cfg, resume, log)?;
    cmd_generate(&cfg, &Regime::BOTH, log)?;
    let metrics = cmd_evaluate(&cfg, log)?;
    cmd_report(&cfg, log)?;
    Ok(metrics)
}

/// Reads the run's metrics, if evaluated.
pub fn read_metrics(output_dir: &Path) -> Result<Metrics> {
    rundir::read_json(&output_dir.join(rundir::METRICS))
}
