//! Run-directory layout, artifact digests, and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sbice_core::dataset::ColumnSchema;
use sbice_core::simulators::ThetaVector;
use sbice_core::smc::{GenerationRecord, TerminationReason};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const CONFIG: &str = "config.json";
pub const MANIFEST: &str = "manifest.json";
pub const SOURCE: &str = "source.csv";
pub const POPULATIONS: &str = "populations.csv";
pub const METRICS: &str = "metrics.json";
pub const SUMMARY: &str = "summary.md";
pub const PLOTS: &str = "plots_data";
pub const BIAS_LONG: &str = "plots_data/bias_long.csv";
pub const POSTERIOR_SAMPLES: &str = "plots_data/posterior_samples.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Posterior,
    Prior,
}

impl Regime {
    pub const BOTH: [Regime; 2] = [Regime::Posterior, Regime::Prior];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Posterior => "posterior",
            Regime::Prior => "prior",
        }
    }

    pub fn dir(self) -> String {
        format!("datasets/{}", self.as_str())
    }

    pub fn dataset_file(self, i: usize) -> String {
        format!("{}/dataset_{i}.csv", self.dir())
    }

    pub fn thetas_file(self) -> String {
        format!("{}/thetas.csv", self.dir())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub n: usize,
    pub schema: ColumnSchema,
    /// Generating parameters of a builtin source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaVector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub complete: bool,
    pub generations: Vec<GenerationRecord>,
    pub simulation_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<TerminationReason>,
    /// Whether distances were computed on standardized columns.
    pub distance_standardized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetsRecord {
    pub complete: bool,
    pub count: usize,
    pub n: usize,
    pub schema: ColumnSchema,
    /// Parameter columns of `thetas.csv`, in order.
    pub parameters: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub complete: bool,
    pub source_tau_star: Option<f64>,
    /// Columns the two-sample classifier sees.
    pub classifier_columns: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub library_version: String,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<InferenceRecord>,
    #[serde(default)]
    pub datasets: BTreeMap<Regime, DatasetsRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvaluationRecord>,
    /// Digest of every artifact, keyed by path relative to the run directory.
    #[serde(default)]
    pub files: BTreeMap<String, FileRecord>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// An open run directory. Every artifact write goes through [`RunDir::write`]
/// so the manifest always holds its digest.
pub struct RunDir {
    root: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    /// Opens or creates the directory for `config`, which must match the
    /// config recorded by earlier commands.
    pub fn open(config: &RunConfig) -> Result<Self> {
        let root = config.output_dir.clone();
        let manifest_path = root.join(MANIFEST);
        let manifest = if manifest_path.exists() {
            let m: RunManifest = read_json(&manifest_path)?;
            if m.config != *config {
                return Err(CliError::Config(format!(
                    "{} records a different configuration; use a fresh output_dir or the original config",
                    manifest_path.display()
                )));
            }
            m
        } else {
            fs::create_dir_all(&root).map_err(CliError::io(&root))?;
            let t = now();
            RunManifest {
                library_version: env!("CARGO_PKG_VERSION").into(),
                created_unix: t,
                updated_unix: t,
                config: config.clone(),
                source: None,
                inference: None,
                datasets: BTreeMap::new(),
                evaluation: None,
                files: BTreeMap::new(),
            }
        };
        let mut dir = Self { root, manifest };
        let text = to_json(config);
        dir.write(CONFIG, text.as_bytes())?;
        dir.save()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn save(&mut self) -> Result<()> {
        self.manifest.updated_unix = now();
        let path = self.path(MANIFEST);
        let tmp = self.path("manifest.json.tmp");
        fs::write(&tmp, to_json(&self.manifest)).map_err(CliError::io(&tmp))?;
        fs::rename(&tmp, &path).map_err(CliError::io(&path))
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        }
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.manifest.files.insert(
            rel.to_string(),
            FileRecord {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    /// Forgets and deletes every artifact under `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) -> Result<()> {
        let stale: Vec<String> = self.manifest.files.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        for k in stale {
            let p = self.path(&k);
            if p.exists() {
                fs::remove_file(&p).map_err(CliError::io(&p))?;
            }
            self.manifest.files.remove(&k);
        }
        Ok(())
    }

    pub fn read_to_string(&self, rel: &str) -> Result<String> {
        let p = self.path(rel);
        fs::read_to_string(&p).map_err(CliError::io(&p))
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("run records serialise");
    s.push('\n');
    s
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_input() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_tracks_writes_and_rejects_foreign_configs() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(
            r#"{{"source": {{"kind": "builtin", "id": "dgp1", "n": 50}},
                "simulator": {{"kind": "builtin", "id": "sim1"}},
                "output_dir": {:?}}}"#,
            dir.path().join("run")
        );
        let cfg = RunConfig::from_json(&text).unwrap().resolve().unwrap();
        let mut run = RunDir::open(&cfg).unwrap();
        run.write("datasets/prior/a.csv", b"abc").unwrap();
        run.save().unwrap();
        let reopened = RunDir::open(&cfg).unwrap();
        assert_eq!(reopened.manifest.files["datasets/prior/a.csv"].sha256, sha256_hex(b"abc"));
        assert!(reopened.manifest.files.contains_key(CONFIG));
        let mut other = cfg.clone();
        other.master_seed = 1;
        let other = other.resolve().unwrap();
        assert!(matches!(RunDir::open(&other), Err(CliError::Config(_))));
        let mut run = reopened;
        run.remove_prefix("datasets/prior").unwrap();
        assert!(!run.path("datasets/prior/a.csv").exists());
        assert!(!run.manifest.files.contains_key("datasets/prior/a.csv"));
    }
}
