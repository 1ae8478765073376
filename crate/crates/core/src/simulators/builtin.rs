use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GeneratedDataset, ThetaVector};
use crate::dataset::{bootstrap_covariates, Dataset};
use crate::dist::expit;
use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Structural equations of the builtin parametric models.
///
/// `Sim*` variants resample the covariate `X` from the source dataset;
/// `Dgp*` variants and the identity fixtures `C1..C4` draw their own.
/// Several catalog entries share one set of equations and differ only in
/// prior (e.g. Sim5, Sim10 use `Sim1`; Sim7 uses `Sim6`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearModel {
    /// `T ~ Bern(expit(rho Z + beta X + e))`, `Y = rho Z + beta X + tau T + e`, `e ~ N(0, 0.1)`.
    Sim1,
    /// Sim1 with outcome noise `N(0, 1)`.
    Sim2,
    /// Sim1 with `Z ~ Exponential(rate 0.5)`.
    Sim3,
    /// Sim1 with an extra `X Z` term in treatment and outcome.
    Sim4,
    /// `Z ~ Bern(0.5)`, `T = 1(Z + U[0, 0.5) >= 0.5)`, `Y = rho Z + beta X + tau T + U[0, 0.5)`.
    Sim6,
    /// Sim6 with `0.4 X` added inside the treatment indicator.
    Sim8,
    /// Sim6 equations with `X ~ N(0, 1)` drawn rather than resampled.
    Sim9,
    /// Three-covariate model with effect `tau`, covariates resampled.
    Sim11,
    Dgp1,
    /// Polynomial outcome `rho (Z^2 + Z X) + beta (X^2 - X T) + tau T`.
    Dgp5,
    Dgp6,
    Dgp8,
    Dgp11,
    /// `X ~ N(0,1)`, `T ~ Bern(expit X)`, `Y = X + T`.
    C1,
    /// C1 plus heteroscedastic zero-mean noise `(1 + |X|)(1 + T) eta`.
    C2,
    /// Binary `X`, `T ~ Bern(min(2X, 1))`, `Y = X + T + Z1 - 0.5 + eps`, `Z1 ~ Bern(0.5)`.
    C3,
    /// C3 with `Z2 ~ N(0.5, 1)` in place of `Z1`.
    C4,
}

const LINEAR_NOISE_SD: f64 = 0.1;

impl LinearModel {
    pub fn parameter_names(&self) -> Vec<String> {
        use LinearModel::*;
        match self {
            C1 | C2 | C3 | C4 => Vec::new(),
            Sim11 | Dgp11 => vec!["tau".into()],
            _ => vec!["rho".into(), "beta".into(), "tau".into()],
        }
    }

    pub fn reuses_source_covariates(&self) -> bool {
        use LinearModel::*;
        matches!(self, Sim1 | Sim2 | Sim3 | Sim4 | Sim6 | Sim8 | Sim11)
    }

    fn covariate_names(&self) -> Vec<String> {
        match self {
            LinearModel::Sim11 | LinearModel::Dgp11 => vec!["x1".into(), "x2".into(), "x3".into()],
            _ => vec!["x".into()],
        }
    }

    fn draw_covariates(&self, n: usize, source: Option<&Dataset>, stream: &RandomStream) -> Result<Vec<Vec<f64>>> {
        use LinearModel::*;
        if self.reuses_source_covariates() {
            let src = source.ok_or_else(|| Error::Config(format!("{self:?} needs source covariates")))?;
            let want = self.covariate_names().len();
            if src.p() != want {
                return Err(Error::SchemaMismatch(format!(
                    "{self:?} expects {want} source covariate(s), source has {}",
                    src.p()
                )));
            }
            return Ok(bootstrap_covariates(src, n, stream));
        }
        let mut rng = stream.rng();
        let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        Ok(match self {
            Dgp11 => {
                let x1 = (0..n).map(|_| normal(&mut rng)).collect();
                let x2 = (0..n).map(|_| -(-rng.random::<f64>()).ln_1p() / 0.5).collect();
                let x3 = (0..n).map(|_| 1.0 + normal(&mut rng)).collect();
                vec![x1, x2, x3]
            }
            C3 | C4 => vec![(0..n).map(|_| (rng.random::<f64>() < 0.5) as u8 as f64).collect()],
            _ => vec![(0..n).map(|_| normal(&mut rng)).collect()],
        })
    }

    /// Simulates `n` units. `forced_treatment` replaces the treatment
    /// mechanism with `do(T = t)`; the returned vector is the latent
    /// confounder `Z` (zeros for models without one).
    pub fn simulate_full(
        &self,
        theta: &ThetaVector,
        n: usize,
        source: Option<&Dataset>,
        stream: &RandomStream,
        forced_treatment: Option<f64>,
    ) -> Result<(GeneratedDataset, Vec<f64>)> {
        use LinearModel::*;
        theta.check_names(&self.parameter_names())?;
        let get = |k: &str| theta.get(k).unwrap_or(0.0);
        let (rho, beta, tau) = (get("rho"), get("beta"), get("tau"));

        let x = self.draw_covariates(n, source, &stream.derive(&[0]))?;
        let mut rng = stream.derive(&[1]).rng();
        let mut z = vec![0.0; n];
        let mut t = vec![0.0; n];
        let mut y = vec![0.0; n];
        for i in 0..n {
            let xi = x[0][i];
            let (zi, ti, yi) = match self {
                Sim1 | Sim2 | Sim3 | Sim4 | Dgp1 | Dgp5 => {
                    let zi = if *self == Sim3 {
                        -(-rng.random::<f64>()).ln_1p() / 0.5
                    } else {
                        StandardNormal.sample(&mut rng)
                    };
                    let interaction = if *self == Sim4 { xi * zi } else { 0.0 };
                    let e_t: f64 = StandardNormal.sample(&mut rng);
                    let eta = rho * zi + beta * xi + interaction + LINEAR_NOISE_SD * e_t;
                    let u: f64 = rng.random();
                    let ti = forced_treatment.unwrap_or(if u < expit(eta) { 1.0 } else { 0.0 });
                    let e_y: f64 = StandardNormal.sample(&mut rng);
                    let noise = if *self == Sim2 { e_y } else { LINEAR_NOISE_SD * e_y };
                    let yi = if *self == Dgp5 {
                        rho * (zi * zi + zi * xi) + beta * (xi * xi - xi * ti) + tau * ti + noise
                    } else {
                        rho * zi + beta * xi + tau * ti + interaction + noise
                    };
                    (zi, ti, yi)
                }
                Sim6 | Sim8 | Sim9 | Dgp6 | Dgp8 => {
                    let zi = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
                    let slope = if matches!(self, Sim8 | Dgp8) { 0.4 } else { 0.0 };
                    let u_t = 0.5 * rng.random::<f64>();
                    let ti = forced_treatment.unwrap_or(if zi + slope * xi + u_t >= 0.5 { 1.0 } else { 0.0 });
                    let u_y = 0.5 * rng.random::<f64>();
                    (zi, ti, rho * zi + beta * xi + tau * ti + u_y)
                }
                Sim11 | Dgp11 => {
                    let s = xi + x[1][i] + x[2][i];
                    let e_t: f64 = StandardNormal.sample(&mut rng);
                    let u: f64 = rng.random();
                    let ti = forced_treatment.unwrap_or(if u < expit(s / 3.0 + LINEAR_NOISE_SD * e_t) { 1.0 } else { 0.0 });
                    let e_y: f64 = StandardNormal.sample(&mut rng);
                    (0.0, ti, s + tau * ti + LINEAR_NOISE_SD * e_y)
                }
                C1 | C2 => {
                    let u: f64 = rng.random();
                    let ti = forced_treatment.unwrap_or(if u < expit(xi) { 1.0 } else { 0.0 });
                    let g = if *self == C2 {
                        let eta: f64 = StandardNormal.sample(&mut rng);
                        (1.0 + xi.abs()) * (1.0 + ti) * eta
                    } else {
                        0.0
                    };
                    (0.0, ti, xi + ti + g)
                }
                C3 | C4 => {
                    let p = (2.0 * xi).min(1.0);
                    let u: f64 = rng.random();
                    let ti = forced_treatment.unwrap_or(if u < p { 1.0 } else { 0.0 });
                    let zi = if *self == C3 {
                        if rng.random::<f64>() < 0.5 {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        0.5 + e
                    };
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    (zi, ti, xi + ti + zi - 0.5 + eps)
                }
            };
            z[i] = zi;
            t[i] = ti;
            y[i] = yi;
        }
        let dataset = Dataset::new(x, t, y, self.covariate_names())?;
        Ok((GeneratedDataset::new(dataset, theta.clone()), z))
    }

    pub fn simulate(&self, theta: &ThetaVector, n: usize, source: Option<&Dataset>, stream: &RandomStream) -> Result<GeneratedDataset> {
        self.simulate_full(theta, n, source, stream, None).map(|(g, _)| g)
    }
}

/// Monte-Carlo ATE `E[Y | do(T=1)] - E[Y | do(T=0)]` from two independent
/// interventional samples of size `n`.
pub fn fixture_ate(model: LinearModel, theta: &ThetaVector, n: usize, source: Option<&Dataset>, stream: &RandomStream) -> Result<f64> {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (treated, _) = model.simulate_full(theta, n, source, &stream.derive(&[1]), Some(1.0))?;
    let (control, _) = model.simulate_full(theta, n, source, &stream.derive(&[0]), Some(0.0))?;
    Ok(mean(treated.dataset.outcome()) - mean(control.dataset.outcome()))
}
