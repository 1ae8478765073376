//! Drives the `sbice` binary end to end on small runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_sbice");

fn small_config(dir: &Path, overrides: Value) -> PathBuf {
    let mut cfg = json!({
        "source": {"kind": "builtin", "id": "dgp1", "n": 300},
        "simulator": {"kind": "builtin", "id": "sim1"},
        "smc": {"population_size": 32, "max_generations": 4, "distance": {"n_projections": 10}},
        "emission": {"n_datasets": 6},
        "evaluation": {"classifier": {"n_trees": 25}, "learners": {"gbt": {"n_trees": 20}}},
        "output_dir": "run",
        "master_seed": 5
    });
    merge(&mut cfg, overrides);
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        // A tagged section is replaced whole.
        (Value::Object(b), Value::Object(p)) if !p.contains_key("kind") => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn sbice(args: &[&str], config: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--quiet")
        .env_remove("SBICE_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str], config: &Path) {
    let out = sbice(args, config);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn manifest(run: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_a_deterministic_source() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&["simulate"], &small_config(a.path(), json!({})));
    ok(&["simulate"], &small_config(b.path(), json!({})));
    let text = fs::read_to_string(a.path().join("run/source.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("x,t,y"));
    assert_eq!(text.lines().count(), 301);
    assert_eq!(text, fs::read_to_string(b.path().join("run/source.csv")).unwrap());
    let m = manifest(&a.path().join("run"));
    assert_eq!(m["source"]["theta"]["tau"], json!(1.5));
    assert!(m["files"]["source.csv"]["sha256"].as_str().unwrap().len() == 64);
}

#[test]
fn config_errors_exit_2_with_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("data.csv"), "a,t,y\n1,0,2\n2,1,3\n").unwrap();
    let csv = small_config(
        dir.path(),
        json!({"source": {"kind": "csv", "path": "data.csv",
                          "schema": {"treatment_column": "t", "outcome_column": "y", "covariate_columns": ["x"]}},
               "evaluation": {"source_tau_star": 1.0}}),
    );
    let out = sbice(&["simulate"], &csv);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("source.path") && stderr(&out).contains("missing column `x`"),
        "{}",
        stderr(&out)
    );
    assert!(!dir.path().join("run").exists(), "no side effects before validation");

    let typo = small_config(dir.path(), json!({"smc": {"populaton_size": 3}}));
    let out = sbice(&["simulate"], &typo);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("smc") && stderr(&out).contains("populaton_size"), "{}", stderr(&out));

    let bad = small_config(dir.path(), json!({"smc": {"epsilon_quantile": 1.5}}));
    let out = sbice(&["simulate"], &bad);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("smc: invalid configuration: epsilon_quantile"), "{}", stderr(&out));

    let fine = small_config(dir.path(), json!({}));
    let out = Command::new(BIN)
        .args(["simulate", "--config"])
        .arg(&fine)
        .env("SBICE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(BIN).args(["simulate", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stages_demand_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let out = sbice(&["infer"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sbice simulate"), "{}", stderr(&out));
    let out = sbice(&["report"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("metrics.json not found") && stderr(&out).contains("sbice evaluate"));
    ok(&["simulate"], &cfg);
    let out = sbice(&["generate", "--regime", "posterior"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sbice infer"));
    // The prior regime needs no posterior.
    ok(&["generate", "--regime", "prior"], &cfg);
    let out = sbice(&["evaluate"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--regime posterior"), "{}", stderr(&out));
}

#[test]
fn full_pipeline_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let run = dir.path().join("run");
    for stage in ["simulate", "infer", "generate", "evaluate", "report"] {
        ok(&[stage], &cfg);
    }
    let m = manifest(&run);
    let gens = m["inference"]["generations"].as_array().unwrap();
    assert_eq!(gens.len(), 4);
    let eps: Vec<f64> = gens.iter().map(|g| g["epsilon"].as_f64().unwrap()).collect();
    assert!(eps.windows(2).all(|w| w[1] < w[0]), "{eps:?}");
    assert_eq!(m["inference"]["termination"], json!("max_generations"));
    assert_eq!(m["inference"]["complete"], json!(true));

    let pops = fs::read_to_string(run.join("populations.csv")).unwrap();
    assert_eq!(pops.lines().next(), Some("generation,particle_index,weight,distance,rho,beta,tau"));
    assert_eq!(pops.lines().count(), 1 + 4 * 32);

    let thetas = fs::read_to_string(run.join("datasets/posterior/thetas.csv")).unwrap();
    let rows: Vec<Vec<&str>> = thetas.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[3], r[4], "tau_star equals tau");
    }
    for i in 0..6 {
        let d = fs::read_to_string(run.join(format!("datasets/posterior/dataset_{i}.csv"))).unwrap();
        assert_eq!(d.lines().count(), 301);
    }

    let metrics: Value = serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    let auc = |r: &str| metrics["auc"][r]["mean"].as_f64().unwrap();
    assert!(auc("posterior") < auc("prior"), "{} vs {}", auc("posterior"), auc("prior"));
    assert_eq!(metrics["auc"]["prior"]["per_dataset"].as_array().unwrap().len(), 6);
    assert_eq!(metrics["bse"].as_object().unwrap().len(), 7);
    assert_eq!(metrics["config"]["classifier_columns"], json!("all"));
    for (_, e) in metrics["bse"].as_object().unwrap() {
        assert!(e["posterior"].is_f64() && e["prior"].is_f64());
        assert_eq!(e["n_failed"], json!({"posterior": 0, "prior": 0}));
    }
    let bias = fs::read_to_string(run.join("plots_data/bias_long.csv")).unwrap();
    assert_eq!(bias.lines().next(), Some("regime,estimator,dataset_index,bias"));
    assert_eq!(bias.lines().count(), 1 + 7 + 2 * 7 * 6);
    let samples = fs::read_to_string(run.join("plots_data/posterior_samples.csv")).unwrap();
    assert_eq!(samples.lines().next(), Some("rho,beta,tau,weight"));
    assert_eq!(samples.lines().count(), 33);

    let summary = fs::read_to_string(run.join("summary.md")).unwrap();
    assert!(summary.contains("| estimator | posterior | prior |"));
    assert!(summary.contains("| x_learner_linear |"));
    assert!(summary.contains("| parameter | mean | sd | q05 | q95 |"));
    assert!(summary.contains("| tau |"));

    let m = manifest(&run);
    for f in [
        "metrics.json",
        "plots_data/bias_long.csv",
        "summary.md",
        "datasets/prior/thetas.csv",
        "populations.csv",
    ] {
        let digest = m["files"][f]["sha256"].as_str().unwrap_or_else(|| panic!("{f} has no digest"));
        let bytes = fs::read(run.join(f)).unwrap();
        assert_eq!(digest, sbice_cli::rundir::sha256_hex(&bytes), "{f}");
    }

    // Re-evaluating the same directory reproduces the metrics byte for byte.
    let before = m["files"]["metrics.json"]["sha256"].clone();
    ok(&["evaluate"], &cfg);
    assert_eq!(manifest(&run)["files"]["metrics.json"]["sha256"], before);
}

#[test]
fn pipeline_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let overrides = json!({"smc": {"max_generations": 2}, "emission": {"n_datasets": 3}});
    for d in [&a, &b] {
        ok(&["run"], &small_config(d.path(), overrides.clone()));
    }
    // config.json differs only in the absolute output_dir.
    let files = |d: &Path| {
        let mut f = manifest(&d.join("run"))["files"].clone();
        f.as_object_mut().unwrap().remove("config.json");
        f
    };
    assert_eq!(files(a.path()).as_object().unwrap().len(), 14);
    assert_eq!(files(a.path()), files(b.path()));
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let run = dir.path().join("run");
    ok(&["simulate"], &cfg);
    ok(&["infer"], &cfg);
    let full = fs::read_to_string(run.join("populations.csv")).unwrap();
    let full_manifest = manifest(&run);

    // Roll the run back to two sealed generations, as if interrupted.
    let mut m = full_manifest.clone();
    let inf = m["inference"].as_object_mut().unwrap();
    inf.insert("complete".into(), json!(false));
    inf.remove("termination");
    inf["generations"].as_array_mut().unwrap().truncate(2);
    fs::write(run.join("manifest.json"), serde_json::to_string(&m).unwrap()).unwrap();
    let partial: String = full.lines().take(1 + 2 * 32).map(|l| format!("{l}\n")).collect();
    fs::write(run.join("populations.csv"), partial).unwrap();

    ok(&["infer", "--resume"], &cfg);
    assert_eq!(fs::read_to_string(run.join("populations.csv")).unwrap(), full);
    let resumed = manifest(&run);
    assert_eq!(resumed["inference"], full_manifest["inference"]);
}

#[test]
fn min_epsilon_termination_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({"smc": {"min_epsilon": 5.0}}));
    ok(&["simulate"], &cfg);
    ok(&["infer"], &cfg);
    let m = manifest(&dir.path().join("run"));
    assert_eq!(m["inference"]["termination"], json!("min_epsilon_reached"));
    assert_eq!(m["inference"]["generations"].as_array().unwrap().len(), 1);
}

#[test]
fn estimator_failures_are_counted_without_nan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        json!({"smc": {"max_generations": 1}, "emission": {"n_datasets": 4, "dataset_n": 8},
               "evaluation": {"learners": {"propensity_clip": null}}}),
    );
    ok(&["run"], &cfg);
    let text = fs::read_to_string(dir.path().join("run/metrics.json")).unwrap();
    assert!(!text.contains("NaN") && !text.contains("nan"));
    let metrics: Value = serde_json::from_str(&text).unwrap();
    let failed: u64 = metrics["bse"]
        .as_object()
        .unwrap()
        .values()
        .map(|e| e["n_failed"]["posterior"].as_u64().unwrap() + e["n_failed"]["prior"].as_u64().unwrap())
        .sum();
    assert!(failed > 0);
    assert_eq!(metrics["bse"]["diff_means"]["n_failed"], json!({"posterior": 0, "prior": 0}));
}

fn external(dir: &Path, command: Value) -> PathBuf {
    small_config(
        dir,
        json!({"simulator": {"kind": "external", "command": command, "timeout_ms": 20000,
                             "parameter_names": ["rho", "beta", "tau"],
                             "schema": {"treatment_column": "t", "outcome_column": "y", "covariate_columns": ["x"]}},
               "prior": {"parameters": [{"name": "rho", "lo": 0.0, "hi": 2.0},
                                        {"name": "beta", "lo": -2.0, "hi": 1.0},
                                        {"name": "tau", "lo": 0.0, "hi": 2.0}]},
               "smc": {"max_generations": 2}, "emission": {"n_datasets": 3}}),
    )
}

#[test]
fn external_worker_runs_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = external(dir.path(), json!([BIN, "worker", "--model", "dgp1"]));
    ok(&["run"], &cfg);
    let m = manifest(&dir.path().join("run"));
    assert_eq!(m["inference"]["complete"], json!(true));
    assert_eq!(m["datasets"]["posterior"]["count"], json!(3));
}

#[cfg(unix)]
#[test]
fn protocol_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = external(dir.path(), json!(["/bin/sh", "-c", "while read l; do echo hello; done"]));
    ok(&["simulate"], &cfg);
    let out = sbice(&["infer"], &cfg);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("malformed response"), "{}", stderr(&out));
    let m = manifest(&dir.path().join("run"));
    assert_eq!(m["inference"]["complete"], json!(false));
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = sbice_cli::RunConfig::from_path(&path).and_then(|c| c.resolve());
        assert!(cfg.is_ok(), "{}: {:?}", path.display(), cfg.err());
        count += 1;
    }
    assert_eq!(count, 4);
}
