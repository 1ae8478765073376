use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::simulators::ThetaVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformBound {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// `sum_i coefficients[i] * theta[i] = constant`; parameters not named
/// have coefficient 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearConstraint {
    pub coefficients: ThetaVector,
    pub constant: f64,
}

/// Independent uniform priors, optionally restricted to a hyperplane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub parameters: Vec<UniformBound>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraint: Option<LinearConstraint>,
}

/// Rejection attempts before a constraint slice is declared infeasible.
const MAX_SLICE_ATTEMPTS: usize = 1_000_000;

impl PriorSpec {
    pub fn uniform(bounds: &[(&str, f64, f64)]) -> Self {
        Self {
            parameters: bounds.iter().map(|&(name, lo, hi)| UniformBound { name: name.into(), lo, hi }).collect(),
            constraint: None,
        }
    }

    pub fn with_constraint(mut self, coefficients: &[(&str, f64)], constant: f64) -> Self {
        self.constraint = Some(LinearConstraint {
            coefficients: ThetaVector::new(coefficients.iter().map(|&(n, a)| (n.to_string(), a)).collect()).expect("finite, distinct coefficients"),
            constant,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.parameters.is_empty() {
            return Err(Error::Config("prior declares no parameters".into()));
        }
        for (i, b) in self.parameters.iter().enumerate() {
            if !(b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi) {
                return Err(Error::Config(format!("prior for `{}` needs finite lo < hi, got [{}, {}]", b.name, b.lo, b.hi)));
            }
            if self.parameters[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::Config(format!("prior declares `{}` twice", b.name)));
            }
        }
        if let Some(c) = &self.constraint {
            for name in c.coefficients.names() {
                if !self.parameters.iter().any(|b| b.name == name) {
                    return Err(Error::UnknownParameter(name.into()));
                }
            }
            let a = self.coefficients();
            if a.iter().all(|&v| v == 0.0) {
                return Err(Error::Config("constraint has no nonzero coefficient".into()));
            }
            if !c.constant.is_finite() {
                return Err(Error::Config("constraint constant must be finite".into()));
            }
            let (mut lo, mut hi) = (0.0, 0.0);
            for (ai, b) in a.iter().zip(&self.parameters) {
                lo += (ai * b.lo).min(ai * b.hi);
                hi += (ai * b.lo).max(ai * b.hi);
            }
            if c.constant < lo || c.constant > hi {
                return Err(Error::Config(format!(
                    "constraint value {} lies outside the attainable range [{lo}, {hi}]",
                    c.constant
                )));
            }
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.parameters.iter().map(|b| b.name.clone()).collect()
    }

    pub fn dim(&self) -> usize {
        self.parameters.len()
    }

    /// Constraint coefficients aligned with `parameters` (zeros if none).
    pub fn coefficients(&self) -> Vec<f64> {
        match &self.constraint {
            Some(c) => self.parameters.iter().map(|b| c.coefficients.get(&b.name).unwrap_or(0.0)).collect(),
            None => vec![0.0; self.dim()],
        }
    }

    /// Index of the parameter solved from the constraint: the one whose
    /// coefficient times range is largest.
    pub fn dependent_index(&self) -> Option<usize> {
        self.constraint.as_ref()?;
        let a = self.coefficients();
        (0..self.dim()).filter(|&i| a[i] != 0.0).max_by(|&i, &j| {
            let si = a[i].abs() * (self.parameters[i].hi - self.parameters[i].lo);
            let sj = a[j].abs() * (self.parameters[j].hi - self.parameters[j].lo);
            si.total_cmp(&sj).then(j.cmp(&i))
        })
    }

    /// Indices of the parameters that are sampled and perturbed directly.
    pub fn free_indices(&self) -> Vec<usize> {
        let dep = self.dependent_index();
        (0..self.dim()).filter(|&i| Some(i) != dep).collect()
    }

    /// Fills the dependent coordinate of `values` from the others.
    pub fn solve_dependent(&self, values: &mut [f64]) {
        if let (Some(d), Some(c)) = (self.dependent_index(), &self.constraint) {
            let a = self.coefficients();
            let rest: f64 = (0..values.len()).filter(|&i| i != d).map(|i| a[i] * values[i]).sum();
            values[d] = (c.constant - rest) / a[d];
        }
    }

    pub fn in_box(&self, values: &[f64]) -> bool {
        values.iter().zip(&self.parameters).all(|(v, b)| *v >= b.lo && *v <= b.hi)
    }

    pub fn constraint_residual(&self, values: &[f64]) -> f64 {
        match &self.constraint {
            Some(c) => (self.coefficients().iter().zip(values).map(|(a, v)| a * v).sum::<f64>() - c.constant).abs(),
            None => 0.0,
        }
    }

    /// Draws prior values with a caller-owned generator; `None` when the
    /// solved coordinate falls outside its bounds.
    pub(crate) fn try_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        let mut v: Vec<f64> = self.parameters.iter().map(|b| b.lo + (b.hi - b.lo) * rng.random::<f64>()).collect();
        if let Some(d) = self.dependent_index() {
            self.solve_dependent(&mut v);
            let b = &self.parameters[d];
            if !(v[d] >= b.lo && v[d] <= b.hi) {
                return None;
            }
        }
        Some(v)
    }

    pub(crate) fn sample_values<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        for _ in 0..MAX_SLICE_ATTEMPTS {
            if let Some(v) = self.try_sample(rng) {
                return Ok(v);
            }
        }
        Err(Error::Config(format!(
            "constraint slice is (numerically) empty: no feasible draw in {MAX_SLICE_ATTEMPTS} attempts"
        )))
    }

    pub fn to_theta(&self, values: &[f64]) -> ThetaVector {
        ThetaVector::from_slices(&self.names(), values).expect("finite values and distinct names")
    }
}

/// One draw from the prior: uniform on the box, or uniform on its
/// intersection with the constraint hyperplane.
pub fn sample_prior(prior: &PriorSpec, stream: &RandomStream) -> Result<ThetaVector> {
    prior.validate()?;
    let v = prior.sample_values(&mut stream.rng())?;
    Ok(prior.to_theta(&v))
}
