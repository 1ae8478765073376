//! Linear and logistic learners and the average-treatment-effect estimators.
//!
//! Feature matrices are column-major, as in [`crate::tree`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::dist::{expit, logit};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::tree::{gbt_fit, Gbt, GbtConfig, Loss};

const RIDGE: f64 = 1e-8;
const IRLS_MAX_ITER: usize = 100;
/// Bounds for the initial TMLE outcome model on the unit scale.
const TMLE_BOUND: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    DiffMeans,
    XLearnerLinear,
    XLearnerGbt,
    DmlLinear,
    DmlGbt,
    AipwLinear,
    Tmle,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 7] = [
        EstimatorId::DiffMeans,
        EstimatorId::XLearnerLinear,
        EstimatorId::XLearnerGbt,
        EstimatorId::DmlLinear,
        EstimatorId::DmlGbt,
        EstimatorId::AipwLinear,
        EstimatorId::Tmle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::DiffMeans => "diff_means",
            EstimatorId::XLearnerLinear => "x_learner_linear",
            EstimatorId::XLearnerGbt => "x_learner_gbt",
            EstimatorId::DmlLinear => "dml_linear",
            EstimatorId::DmlGbt => "dml_gbt",
            EstimatorId::AipwLinear => "aipw_linear",
            EstimatorId::Tmle => "tmle",
        }
    }

    fn uses_gbt(self) -> bool {
        matches!(self, EstimatorId::XLearnerGbt | EstimatorId::DmlGbt)
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub gbt: GbtConfig,
    pub cross_fit_folds: usize,
    /// `None` disables propensity clipping.
    pub propensity_clip: Option<[f64; 2]>,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gbt: GbtConfig::default(),
            cross_fit_folds: 2,
            propensity_clip: Some([0.01, 0.99]),
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        self.gbt.validate()?;
        if self.cross_fit_folds < 2 {
            return Err(Error::Config(format!("cross_fit_folds must be at least 2, got {}", self.cross_fit_folds)));
        }
        if let Some([lo, hi]) = self.propensity_clip {
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return Err(Error::Config(format!("propensity_clip must satisfy 0 < lo < hi < 1, got [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn clip(&self, e: f64) -> f64 {
        match self.propensity_clip {
            Some([lo, hi]) => e.clamp(lo, hi),
            None => e,
        }
    }
}

/// One estimator's answer on one dataset: a finite value, or the reason
/// there is none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub estimator: EstimatorId,
    pub dataset_ref: String,
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AteEstimate {
    pub fn with_ref(mut self, dataset_ref: impl Into<String>) -> Self {
        self.dataset_ref = dataset_ref.into();
        self
    }

    pub fn is_ok(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    /// Intercept followed by one slope per column.
    pub coefficients: Vec<f64>,
    /// The design was rank deficient and a ridge penalty was added.
    pub ridge: bool,
}

impl OlsFit {
    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        linear_predict(&self.coefficients, x)
    }
}

fn linear_predict(coefficients: &[f64], x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.first().map_or(0, Vec::len);
    let mut out = vec![coefficients[0]; n];
    for (b, col) in coefficients[1..].iter().zip(x) {
        for (o, v) in out.iter_mut().zip(col) {
            *o += b * v;
        }
    }
    out
}

fn design(x: &[Vec<f64>], n: usize, intercept: bool) -> DMatrix<f64> {
    let k = usize::from(intercept);
    DMatrix::from_fn(n, x.len() + k, |i, j| if j < k { 1.0 } else { x[j - k][i] })
}

fn check_columns(x: &[Vec<f64>], n: usize) -> Result<()> {
    if x.iter().any(|c| c.len() != n) {
        return Err(Error::Estimation("feature columns must match the target length".into()));
    }
    Ok(())
}

/// Least squares with intercept via Householder QR; falls back to a ridge
/// penalty of 1e-8 when the design is rank deficient.
pub fn ols_fit(x: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    check_columns(x, n)?;
    if n <= x.len() + 1 {
        return Err(Error::Estimation(format!("ols needs more than {} rows, got {n}", x.len() + 1)));
    }
    let a = design(x, n, true);
    let b = DVector::from_column_slice(y);
    let qr = a.clone().qr();
    let r = qr.r();
    let dmax = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let full_rank = r.diagonal().iter().all(|v| v.abs() > 1e-10 * dmax.max(1e-300));
    if full_rank {
        let qtb = qr.q().transpose() * &b;
        if let Some(beta) = r.solve_upper_triangular(&qtb) {
            if beta.iter().all(|v| v.is_finite()) {
                return Ok(OlsFit {
                    coefficients: beta.iter().copied().collect(),
                    ridge: false,
                });
            }
        }
    }
    let q = a.ncols();
    let mut ata = a.transpose() * &a;
    for j in 0..q {
        ata[(j, j)] += RIDGE;
    }
    let atb = a.transpose() * b;
    let beta = ata
        .cholesky()
        .map(|c| c.solve(&atb))
        .ok_or_else(|| Error::Estimation("ridge system is not positive definite".into()))?;
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        ridge: true,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticFit {
    /// Intercept (when fitted) followed by one slope per column.
    pub coefficients: Vec<f64>,
    pub intercept: bool,
    /// Fitted probabilities reached 0 or 1: the classes are separable.
    pub separated: bool,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn linear_predictor(&self, x: &[Vec<f64>]) -> Vec<f64> {
        if self.intercept {
            linear_predict(&self.coefficients, x)
        } else {
            let n = x.first().map_or(0, Vec::len);
            let mut out = vec![0.0; n];
            for (b, col) in self.coefficients.iter().zip(x) {
                for (o, v) in out.iter_mut().zip(col) {
                    *o += b * v;
                }
            }
            out
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        self.linear_predictor(x).into_iter().map(expit).collect()
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood of targets in `[0, 1]` at linear predictor `eta`.
pub fn log_likelihood(eta: &[f64], y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(&e, &v)| v * e - softplus(e)).sum()
}

/// Maximum likelihood for `P(y=1) = expit(offset + Xb)` by Newton/IRLS
/// with step halving. Targets may be fractional (quasi-binomial).
pub fn logistic_irls(x: &[Vec<f64>], y: &[f64], offset: Option<&[f64]>, intercept: bool) -> Result<LogisticFit> {
    let n = y.len();
    check_columns(x, n)?;
    if y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Estimation("logistic targets must lie in [0, 1]".into()));
    }
    let a = design(x, n, intercept);
    let q = a.ncols();
    let off: Vec<f64> = offset.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let eta_of = |beta: &DVector<f64>| -> Vec<f64> {
        let lin = &a * beta;
        lin.iter().zip(&off).map(|(l, o)| l + o).collect()
    };
    let mut beta = DVector::zeros(q);
    if intercept && offset.is_none() {
        let m = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
        beta[0] = logit(m);
    }
    let mut eta = eta_of(&beta);
    let mut ll = log_likelihood(&eta, y);
    let mut iterations = 0;
    while iterations < IRLS_MAX_ITER {
        let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
        let resid = DVector::from_iterator(n, p.iter().zip(y).map(|(pi, yi)| yi - pi));
        let grad = a.transpose() * &resid;
        if grad.amax() <= 1e-10 * n as f64 {
            break;
        }
        iterations += 1;
        let w: Vec<f64> = p.iter().map(|pi| (pi * (1.0 - pi)).max(1e-12)).collect();
        let mut aw = a.clone();
        for (i, wi) in w.iter().enumerate() {
            aw.row_mut(i).scale_mut(wi.sqrt());
        }
        let mut info = aw.tr_mul(&aw);
        let scale = (0..q).map(|j| info[(j, j)]).fold(0.0f64, f64::max).max(1.0);
        for j in 0..q {
            info[(j, j)] += 1e-12 * scale;
        }
        let Some(chol) = info.cholesky() else { break };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &beta + t * &step;
            let e = eta_of(&cand);
            let l = log_likelihood(&e, y);
            if l >= ll {
                improved = l > ll || t == 1.0;
                beta = cand;
                eta = e;
                ll = l;
                break;
            }
            t *= 0.5;
        }
        if !improved || step.amax() * t <= 1e-14 * (1.0 + beta.amax()) {
            break;
        }
    }
    let separated = eta.iter().zip(y).all(|(&e, &v)| {
        let p = expit(e);
        (v == 1.0 && p > 1.0 - 1e-8) || (v == 0.0 && p < 1e-8)
    });
    Ok(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        intercept,
        separated,
        iterations,
    })
}

/// Logistic regression with intercept on 0/1 labels.
pub fn logistic_fit(x: &[Vec<f64>], labels: &[f64]) -> Result<LogisticFit> {
    if labels.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Estimation("logistic labels must be 0 or 1".into()));
    }
    let ones = labels.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::Estimation("logistic regression needs both classes".into()));
    }
    logistic_irls(x, labels, None, true)
}

fn subset(x: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    x.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect()
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Learner {
    Linear,
    Gbt,
}

enum Regressor {
    Linear(OlsFit),
    Gbt(Gbt),
}

impl Regressor {
    fn fit(learner: Learner, x: &[Vec<f64>], y: &[f64], cfg: &LearnerConfig, warnings: &mut Vec<String>) -> Result<Self> {
        Ok(match learner {
            Learner::Linear => {
                let f = ols_fit(x, y)?;
                if f.ridge {
                    note(warnings, "rank-deficient design: ridge fallback");
                }
                Regressor::Linear(f)
            }
            Learner::Gbt => Regressor::Gbt(gbt_fit(x, y, &cfg.gbt, Loss::Squared)?),
        })
    }

    fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        match self {
            Regressor::Linear(f) => f.predict(x),
            Regressor::Gbt(g) => g.predict(x),
        }
    }
}

fn note(warnings: &mut Vec<String>, w: &str) {
    if !warnings.iter().any(|v| v == w) {
        warnings.push(w.into());
    }
}

fn propensity(learner: Learner, x: &[Vec<f64>], t: &[f64], x_eval: &[Vec<f64>], cfg: &LearnerConfig, warnings: &mut Vec<String>) -> Result<Vec<f64>> {
    match learner {
        Learner::Linear => {
            let f = logistic_fit(x, t)?;
            if f.separated {
                note(warnings, "perfect separation in propensity model");
            }
            Ok(f.predict(x_eval))
        }
        Learner::Gbt => Ok(gbt_fit(x, t, &cfg.gbt, Loss::Logistic)?.predict(x_eval)),
    }
}

struct Arms {
    treated: Vec<usize>,
    control: Vec<usize>,
}

fn arms(d: &Dataset, min_size: usize) -> Result<Arms> {
    let (treated, control): (Vec<usize>, Vec<usize>) = (0..d.n()).partition(|&i| d.treatment()[i] == 1.0);
    for (name, arm) in [("treated", &treated), ("control", &control)] {
        if arm.is_empty() {
            return Err(Error::Estimation(format!("empty {name} arm")));
        }
    }
    for (name, arm) in [("treated", &treated), ("control", &control)] {
        if arm.len() < min_size {
            return Err(Error::Estimation(format!("{name} arm has {} units, need {min_size}", arm.len())));
        }
    }
    Ok(Arms { treated, control })
}

fn diff_means(d: &Dataset) -> Result<f64> {
    let a = arms(d, 1)?;
    let y = d.outcome();
    Ok(mean(&pick(y, &a.treated)) - mean(&pick(y, &a.control)))
}

fn x_learner(d: &Dataset, learner: Learner, cfg: &LearnerConfig, warnings: &mut Vec<String>) -> Result<f64> {
    let x = d.covariates();
    let y = d.outcome();
    let a = arms(d, 5.max(d.p() + 2))?;
    let (x1, x0) = (subset(x, &a.treated), subset(x, &a.control));
    let (y1, y0) = (pick(y, &a.treated), pick(y, &a.control));
    let mu0 = Regressor::fit(learner, &x0, &y0, cfg, warnings)?;
    let mu1 = Regressor::fit(learner, &x1, &y1, cfg, warnings)?;
    let d1: Vec<f64> = y1.iter().zip(mu0.predict(&x1)).map(|(v, m)| v - m).collect();
    let d0: Vec<f64> = mu1.predict(&x0).iter().zip(&y0).map(|(m, v)| m - v).collect();
    let tau1 = Regressor::fit(learner, &x1, &d1, cfg, warnings)?.predict(x);
    let tau0 = Regressor::fit(learner, &x0, &d0, cfg, warnings)?.predict(x);
    let e = propensity(Learner::Linear, x, d.treatment(), x, cfg, warnings)?;
    Ok(mean(&(0..d.n()).map(|i| e[i] * tau0[i] + (1.0 - e[i]) * tau1[i]).collect::<Vec<_>>()))
}

/// Fold of each unit: a seeded permutation dealt round-robin within each
/// treatment arm, so folds are balanced and independent of arm labels.
pub fn cross_fit_folds(treatment: &[f64], k: usize, seed: u64) -> Vec<usize> {
    let n = treatment.len();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut RandomStream::new(seed).derive(&[0x0064_6d6c]).rng());
    let mut counter = [0usize; 2];
    let mut fold = vec![0; n];
    for i in perm {
        let arm = usize::from(treatment[i] == 1.0);
        fold[i] = counter[arm] % k;
        counter[arm] += 1;
    }
    fold
}

/// Out-of-fold predictions: `fit_predict(train, test)` returns predictions
/// for `test` from a model trained on `train` only.
fn cross_fit<F>(folds: &[usize], k: usize, mut fit_predict: F) -> Result<Vec<f64>>
where
    F: FnMut(&[usize], &[usize]) -> Result<Vec<f64>>,
{
    let mut out = vec![f64::NAN; folds.len()];
    for f in 0..k {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] == f);
        if test.is_empty() {
            continue;
        }
        let pred = fit_predict(&train, &test)?;
        for (&i, p) in test.iter().zip(pred) {
            out[i] = p;
        }
    }
    Ok(out)
}

fn dml(d: &Dataset, learner: Learner, cfg: &LearnerConfig, warnings: &mut Vec<String>) -> Result<f64> {
    let k = cfg.cross_fit_folds;
    arms(d, k * 5.max(d.p() + 2))?;
    let x = d.covariates();
    let (t, y) = (d.treatment(), d.outcome());
    let folds = cross_fit_folds(t, k, cfg.seed);
    let m = cross_fit(&folds, k, |train, test| {
        Ok(Regressor::fit(learner, &subset(x, train), &pick(y, train), cfg, warnings)?.predict(&subset(x, test)))
    })?;
    let e = cross_fit(&folds, k, |train, test| {
        propensity(learner, &subset(x, train), &pick(t, train), &subset(x, test), cfg, warnings)
    })?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..d.n() {
        let rt = t[i] - e[i];
        num += rt * (y[i] - m[i]);
        den += rt * rt;
    }
    if den.is_nan() || den <= 1e-12 * d.n() as f64 {
        return Err(Error::Estimation("treatment residuals vanish: propensity is degenerate".into()));
    }
    Ok(num / den)
}

fn clipped_propensity(d: &Dataset, cfg: &LearnerConfig, warnings: &mut Vec<String>) -> Result<Vec<f64>> {
    let x = d.covariates();
    let raw = propensity(Learner::Linear, x, d.treatment(), x, cfg, warnings)?;
    let e: Vec<f64> = raw.iter().map(|&v| cfg.clip(v)).collect();
    if let Some([lo, hi]) = cfg.propensity_clip {
        let clipped = raw.iter().filter(|&&v| v <= lo || v >= hi).count();
        if clipped == raw.len() {
            return Err(Error::Estimation("degenerate propensity: every score was clipped".into()));
        }
        if clipped > 0 {
            note(warnings, "propensity scores clipped");
        }
    }
    Ok(e)
}

/// The augmented inverse-propensity score mean for given nuisances.
fn aipw_score(t: &[f64], y: &[f64], mu0: &[f64], mu1: &[f64], e: &[f64]) -> f64 {
    let s: f64 = (0..t.len())
        .map(|i| mu1[i] - mu0[i] + t[i] * (y[i] - mu1[i]) / e[i] - (1.0 - t[i]) * (y[i] - mu0[i]) / (1.0 - e[i]))
        .sum();
    s / t.len() as f64
}

fn aipw(d: &Dataset, cfg: &LearnerConfig, warnings: &mut Vec<String>) -> Result<f64> {
    let a = arms(d, 5.max(d.p() + 2))?;
    let x = d.covariates();
    let y = d.outcome();
    let mu0 = Regressor::fit(Learner::Linear, &subset(x, &a.control), &pick(y, &a.control), cfg, warnings)?.predict(x);
    let mu1 = Regressor::fit(Learner::Linear, &subset(x, &a.treated), &pick(y, &a.treated), cfg, warnings)?.predict(x);
    let e = clipped_propensity(d, cfg, warnings)?;
    Ok(aipw_score(d.treatment(), y, &mu0, &mu1, &e))
}

struct TmleFit {
    ate: f64,
    /// `mean(H (Y_scaled - Q*))` at the observed treatment.
    score: f64,
}

fn tmle(d: &Dataset, cfg: &LearnerConfig, warnings: &mut Vec<String>) -> Result<TmleFit> {
    arms(d, 5.max(d.p() + 2))?;
    let (t, y) = (d.treatment(), d.outcome());
    let n = d.n();
    let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if range <= 0.0 {
        return Ok(TmleFit { ate: 0.0, score: 0.0 });
    }
    let ys: Vec<f64> = y.iter().map(|v| ((v - lo) / range).clamp(0.0, 1.0)).collect();
    let mut xt = d.covariates().to_vec();
    xt.push(t.to_vec());
    let q = Regressor::fit(Learner::Linear, &xt, &ys, cfg, warnings)?;
    let predict_at = |arm: f64| {
        let mut xa = d.covariates().to_vec();
        xa.push(vec![arm; n]);
        q.predict(&xa).into_iter().map(|v| v.clamp(TMLE_BOUND, 1.0 - TMLE_BOUND)).collect::<Vec<_>>()
    };
    let (q1, q0) = (predict_at(1.0), predict_at(0.0));
    let qa: Vec<f64> = (0..n).map(|i| if t[i] == 1.0 { q1[i] } else { q0[i] }).collect();
    let e = clipped_propensity(d, cfg, warnings)?;
    let h1: Vec<f64> = (0..n).map(|i| t[i] / e[i]).collect();
    let h0: Vec<f64> = (0..n).map(|i| -(1.0 - t[i]) / (1.0 - e[i])).collect();
    let offset: Vec<f64> = qa.iter().map(|&v| logit(v)).collect();
    let fl = logistic_irls(&[h1.clone(), h0.clone()], &ys, Some(&offset), false)?;
    let (eps1, eps0) = (fl.coefficients[0], fl.coefficients[1]);
    let q1s: Vec<f64> = (0..n).map(|i| expit(logit(q1[i]) + eps1 / e[i])).collect();
    let q0s: Vec<f64> = (0..n).map(|i| expit(logit(q0[i]) - eps0 / (1.0 - e[i]))).collect();
    let score = (0..n)
        .map(|i| {
            let qs = if t[i] == 1.0 { q1s[i] } else { q0s[i] };
            (h1[i] + h0[i]) * (ys[i] - qs)
        })
        .sum::<f64>()
        / n as f64;
    let ate = range * mean(&(0..n).map(|i| q1s[i] - q0s[i]).collect::<Vec<_>>());
    Ok(TmleFit { ate, score })
}

/// Applies estimator `id` to `dataset`. Failures are reported in the
/// estimate, never as NaN.
pub fn estimate_ate(dataset: &Dataset, id: EstimatorId, cfg: &LearnerConfig) -> AteEstimate {
    let mut warnings = Vec::new();
    let learner = if id.uses_gbt() { Learner::Gbt } else { Learner::Linear };
    let result = cfg.validate().and_then(|()| match id {
        EstimatorId::DiffMeans => diff_means(dataset),
        EstimatorId::XLearnerLinear | EstimatorId::XLearnerGbt => x_learner(dataset, learner, cfg, &mut warnings),
        EstimatorId::DmlLinear | EstimatorId::DmlGbt => dml(dataset, learner, cfg, &mut warnings),
        EstimatorId::AipwLinear => aipw(dataset, cfg, &mut warnings),
        EstimatorId::Tmle => tmle(dataset, cfg, &mut warnings).map(|f| {
            if f.score.abs() > 1e-6 {
                warnings.push(format!("fluctuation left an efficient-score mean of {:.2e}", f.score));
            }
            f.ate
        }),
    });
    let (value, failure) = match result {
        Ok(v) if v.is_finite() => (Some(v), None),
        Ok(v) => (None, Some(format!("non-finite estimate ({v})"))),
        Err(e) => (None, Some(e.to_string())),
    };
    AteEstimate {
        estimator: id,
        dataset_ref: String::new(),
        value,
        failure,
        warnings,
    }
}
