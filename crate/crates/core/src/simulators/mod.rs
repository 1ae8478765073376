//! Dataset generators: the builtin linear structural models, the frugal
//! Gaussian-copula simulator, and an adapter for external worker processes.

mod builtin;
mod catalog;
mod external;
mod frugal;

use std::fmt;
use std::sync::Arc;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub use builtin::{fixture_ate, LinearModel};
pub use catalog::{builtin_catalog, catalog_entry, CatalogEntry};
pub use external::{ExternalConfig, ExternalSimulator, WorkerMode, WorkerRequest};
pub use frugal::{frugal_simulate, FrugalConfig, FrugalCovariate, Propensity, PropensityTerm};

/// Ordered assignment of DGP parameters, e.g. `(rho, beta, tau)`.
///
/// Serialises as a JSON object whose key order is the vector order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ThetaVector(Vec<(String, f64)>);

impl ThetaVector {
    pub fn new(pairs: Vec<(String, f64)>) -> Result<Self> {
        for (i, (name, v)) in pairs.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Config(format!("parameter `{name}` is not finite")));
            }
            if pairs[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Config(format!("parameter `{name}` given twice")));
            }
        }
        Ok(Self(pairs))
    }

    pub fn from_slices(names: &[String], values: &[f64]) -> Result<Self> {
        Self::new(names.iter().cloned().zip(values.iter().copied()).collect())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn require(&self, name: &str) -> Result<f64> {
        self.get(name).ok_or_else(|| Error::MissingParameter(name.into()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(|(_, v)| *v).collect()
    }

    pub fn pairs(&self) -> &[(String, f64)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Errors unless the names are exactly `declared` (in any order).
    pub fn check_names(&self, declared: &[String]) -> Result<()> {
        if let Some(extra) = self.names().find(|n| !declared.iter().any(|d| d == n)) {
            return Err(Error::UnknownParameter(extra.into()));
        }
        if let Some(missing) = declared.iter().find(|d| self.get(d).is_none()) {
            return Err(Error::MissingParameter(missing.clone()));
        }
        Ok(())
    }
}

impl Serialize for ThetaVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ThetaVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ThetaVector;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of parameter names to numbers")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> std::result::Result<ThetaVector, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = m.next_entry::<String, f64>()? {
                    pairs.push((k, v));
                }
                ThetaVector::new(pairs).map_err(serde::de::Error::custom)
            }
        }
        d.deserialize_map(V)
    }
}

/// A simulated dataset together with the parameters that produced it.
#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    pub theta: ThetaVector,
    /// Ground-truth ATE of this dataset: the `tau` component of `theta`.
    pub tau_star: f64,
}

impl GeneratedDataset {
    pub fn new(dataset: Dataset, theta: ThetaVector) -> Self {
        let tau_star = theta.get("tau").unwrap_or(f64::NAN);
        Self { dataset, theta, tau_star }
    }
}

/// Anything that maps parameters and a random stream to a dataset.
pub trait Simulator: Sync {
    fn parameter_names(&self) -> Vec<String>;
    fn simulate(&self, theta: &ThetaVector, stream: &RandomStream) -> Result<GeneratedDataset>;
}

#[derive(Clone, Debug)]
pub enum SimulatorVariant {
    Linear(LinearModel),
    Frugal(FrugalConfig),
    External(ExternalConfig),
}

/// A configured simulator: process, sample size, and the source dataset
/// whose covariates are resampled by the variants that reuse them.
pub struct SimulatorConfig {
    pub variant: SimulatorVariant,
    pub n: usize,
    pub source: Option<Arc<Dataset>>,
    external: Option<ExternalSimulator>,
}

impl SimulatorConfig {
    pub fn new(variant: SimulatorVariant, n: usize, source: Option<Arc<Dataset>>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("sample size must be at least 2, got {n}")));
        }
        let external = match &variant {
            SimulatorVariant::External(cfg) => Some(ExternalSimulator::new(cfg.clone())?),
            SimulatorVariant::Linear(m) if m.reuses_source_covariates() && source.is_none() => {
                return Err(Error::Config(format!("{m:?} resamples source covariates but no source dataset was given")))
            }
            SimulatorVariant::Frugal(f) => {
                f.validate()?;
                None
            }
            _ => None,
        };
        Ok(Self { variant, n, source, external })
    }
}

impl fmt::Debug for SimulatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SimulatorConfig")
            .field("variant", &self.variant)
            .field("n", &self.n)
            .field("source_rows", &self.source.as_ref().map(|s| s.n()))
            .finish()
    }
}

impl Simulator for SimulatorConfig {
    fn parameter_names(&self) -> Vec<String> {
        match &self.variant {
            SimulatorVariant::Linear(m) => m.parameter_names(),
            SimulatorVariant::Frugal(f) => f.parameter_names(),
            SimulatorVariant::External(e) => e.parameter_names.clone(),
        }
    }

    fn simulate(&self, theta: &ThetaVector, stream: &RandomStream) -> Result<GeneratedDataset> {
        simulate(self, theta, stream)
    }
}

/// One dataset of `config.n` rows at parameters `theta`.
pub fn simulate(config: &SimulatorConfig, theta: &ThetaVector, stream: &RandomStream) -> Result<GeneratedDataset> {
    theta.check_names(&config.parameter_names())?;
    match &config.variant {
        SimulatorVariant::Linear(m) => m.simulate(theta, config.n, config.source.as_deref(), stream),
        SimulatorVariant::Frugal(f) => frugal_simulate(f, theta, stream, config.n),
        SimulatorVariant::External(_) => config
            .external
            .as_ref()
            .expect("external variant always carries its adapter")
            .simulate(theta, stream, config.n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_json_preserves_order() {
        let t = ThetaVector::new(vec![("tau".into(), 1.5), ("rho".into(), -0.25)]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"tau":1.5,"rho":-0.25}"#);
        let back: ThetaVector = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn theta_rejects_duplicates_and_nan() {
        assert!(ThetaVector::new(vec![("a".into(), 1.0), ("a".into(), 2.0)]).is_err());
        assert!(ThetaVector::new(vec![("a".into(), f64::NAN)]).is_err());
    }

    #[test]
    fn name_checks() {
        let declared = vec!["rho".to_string(), "tau".to_string()];
        let ok = ThetaVector::new(vec![("tau".into(), 1.0), ("rho".into(), 0.0)]).unwrap();
        assert!(ok.check_names(&declared).is_ok());
        let extra = ThetaVector::new(vec![("tau".into(), 1.0), ("rho".into(), 0.0), ("x".into(), 0.0)]).unwrap();
        assert!(matches!(extra.check_names(&declared), Err(Error::UnknownParameter(n)) if n == "x"));
        let missing = ThetaVector::new(vec![("tau".into(), 1.0)]).unwrap();
        assert!(matches!(missing.check_names(&declared), Err(Error::MissingParameter(n)) if n == "rho"));
    }
}
