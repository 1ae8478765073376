//! Frugal parameterisation: covariate margins and a causal margin
//! `Y | do(T) ~ N(a + tau T, sigma)` coupled by a Gaussian copula.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GeneratedDataset, ThetaVector};
use crate::copula::{cholesky_factor, ConditionalCopula, CorrelationMatrix};
use crate::dataset::Dataset;
use crate::dist::{expit, std_normal_cdf, DistributionSpec};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrugalCovariate {
    pub name: String,
    pub margin: DistributionSpec,
    /// Generated (and coupled through the copula) but dropped from output.
    #[serde(default)]
    pub hidden: bool,
}

/// `coef * prod(x[factors])`; an empty factor list is a constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityTerm {
    pub coef: f64,
    pub factors: Vec<usize>,
}

/// Logistic propensity `expit(intercept + sum of terms)` over the realised
/// covariate values (hidden ones included).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Propensity {
    pub intercept: f64,
    pub terms: Vec<PropensityTerm>,
}

impl Propensity {
    pub fn linear(intercept: f64, coefs: &[f64]) -> Self {
        Self {
            intercept,
            terms: coefs.iter().enumerate().map(|(j, &coef)| PropensityTerm { coef, factors: vec![j] }).collect(),
        }
    }

    fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .terms
                .iter()
                .map(|t| t.coef * t.factors.iter().map(|&j| x[j]).product::<f64>())
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrugalConfig {
    pub covariates: Vec<FrugalCovariate>,
    pub propensity: Propensity,
    /// `a` in `N(a + tau T, sigma)`.
    pub outcome_intercept: f64,
    /// `sigma` in `N(a + tau T, sigma)`.
    pub outcome_sd: f64,
    /// Spearman matrix over `(covariates.., causal-margin quantile)`.
    pub correlation: CorrelationMatrix,
    /// When set, the parameter `rho` replaces every hidden-covariate /
    /// causal-margin entry of `correlation`.
    #[serde(default)]
    pub rho_override: bool,
}

impl FrugalConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.covariates.len();
        if self.correlation.dim() != k + 1 {
            return Err(Error::Config(format!(
                "correlation matrix is {0}x{0}, expected {1}x{1} for {k} covariates plus the causal margin",
                self.correlation.dim(),
                k + 1
            )));
        }
        for c in &self.covariates {
            c.margin.validate()?;
        }
        for t in &self.propensity.terms {
            if let Some(&j) = t.factors.iter().find(|&&j| j >= k) {
                return Err(Error::Config(format!("propensity term refers to covariate {j} of {k}")));
            }
        }
        if self.outcome_sd.is_nan() || self.outcome_sd <= 0.0 {
            return Err(Error::Config("outcome sd must be positive".into()));
        }
        if self.rho_override && !self.covariates.iter().any(|c| c.hidden) {
            return Err(Error::Config("rho_override needs at least one hidden covariate".into()));
        }
        if self.covariates.iter().all(|c| c.hidden) {
            return Err(Error::Config("at least one covariate must be observed".into()));
        }
        Ok(())
    }

    pub fn parameter_names(&self) -> Vec<String> {
        if self.rho_override {
            vec!["tau".into(), "rho".into()]
        } else {
            vec!["tau".into()]
        }
    }

    /// Spearman matrix with the `rho` override applied.
    pub fn effective_correlation(&self, theta: &ThetaVector) -> Result<CorrelationMatrix> {
        let mut r = self.correlation.clone();
        if self.rho_override {
            let rho = theta.require("rho")?;
            let last = self.covariates.len();
            for (j, c) in self.covariates.iter().enumerate() {
                if c.hidden {
                    r.set_symmetric(j, last, rho)?;
                }
            }
        }
        Ok(r)
    }
}

/// Draws `n` units from the frugal model at `theta`.
///
/// Covariate scores are drawn jointly normal, pushed through each margin,
/// the treatment is drawn from the propensity of the realised covariates,
/// and the causal-margin score is drawn conditionally on all covariate
/// scores. Hidden covariates are generated and then dropped.
pub fn frugal_simulate(config: &FrugalConfig, theta: &ThetaVector, stream: &RandomStream, n: usize) -> Result<GeneratedDataset> {
    config.validate()?;
    theta.check_names(&config.parameter_names())?;
    let tau = theta.require("tau")?;
    let k = config.covariates.len();

    let pearson = config.effective_correlation(theta)?.to_pearson();
    let cov_block: DMatrix<f64> = pearson.view((0, 0), (k, k)).into_owned();
    let chol = cholesky_factor(&cov_block)?;
    let conditional = ConditionalCopula::from_pearson(&pearson)?;

    let mut rng = stream.rng();
    let mut x = vec![Vec::with_capacity(n); k];
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut e = vec![0.0; k];
    let mut z = vec![0.0; k];
    let mut xi = vec![0.0; k];
    const EDGE: f64 = 1e-16;
    for _ in 0..n {
        for v in e.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for r in 0..k {
            z[r] = (0..=r).map(|c| chol[(r, c)] * e[c]).sum();
        }
        for j in 0..k {
            let u = std_normal_cdf(z[j]).clamp(EDGE, 1.0 - EDGE);
            xi[j] = config.covariates[j].margin.quantile_unchecked(u);
            x[j].push(xi[j]);
        }
        let p = expit(config.propensity.linear_predictor(&xi));
        let ti = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        let e_y: f64 = StandardNormal.sample(&mut rng);
        let score = conditional.mean(&z) + conditional.sd * e_y;
        // Quantile of N(a + tau T, sigma) at Phi(score).
        y.push(config.outcome_intercept + tau * ti + config.outcome_sd * score);
        t.push(ti);
    }

    let mut names = Vec::new();
    let mut observed = Vec::new();
    for (c, col) in config.covariates.iter().zip(x) {
        if !c.hidden {
            names.push(c.name.clone());
            observed.push(col);
        }
    }
    let dataset = Dataset::new(observed, t, y, names)?;
    Ok(GeneratedDataset::new(dataset, theta.clone()))
}
