//! Univariate distributions used by the generating equations.
//!
//! Sampling goes through `rand_distr`; CDFs and quantiles are built on the
//! regularised incomplete gamma/beta functions from `statrs`. Quantiles of
//! kinds without a closed form are found by safeguarded Newton iteration.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::{beta, erf, gamma};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// A univariate marginal distribution.
///
/// `Gamma` is parameterised by mean `mu` and dispersion `phi`
/// (variance `phi * mu^2`), so `Gamma { mu: 1, phi: 1 }` is Exponential(1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Gamma { mu: f64, phi: f64 },
    Beta { a: f64, b: f64 },
    StudentT { loc: f64, scale: f64, df: f64 },
    Bernoulli { p: f64 },
    Exponential { rate: f64 },
}

impl DistributionSpec {
    pub const STANDARD_NORMAL: Self = Self::Normal { mean: 0.0, sd: 1.0 };

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Normal { mean, sd } => mean.is_finite() && sd > 0.0 && sd.is_finite(),
            // lo == hi is accepted as a point mass.
            Self::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && hi >= lo,
            Self::Gamma { mu, phi } => mu > 0.0 && phi > 0.0 && mu.is_finite() && phi.is_finite(),
            Self::Beta { a, b } => a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite(),
            Self::StudentT { loc, scale, df } => loc.is_finite() && scale > 0.0 && scale.is_finite() && df > 0.0,
            Self::Bernoulli { p } => (0.0..=1.0).contains(&p),
            Self::Exponential { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid distribution parameters: {self:?}")))
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Bernoulli { .. })
    }

    /// One draw. Assumes `validate` has passed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Self::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Self::Gamma { mu, phi } => {
                let g = rand_distr::Gamma::new(1.0 / phi, mu * phi).expect("validated gamma");
                g.sample(rng)
            }
            Self::Beta { a, b } => rand_distr::Beta::new(a, b).expect("validated beta").sample(rng),
            Self::StudentT { loc, scale, df } => {
                let t = rand_distr::StudentT::new(df).expect("validated t");
                loc + scale * t.sample(rng)
            }
            Self::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Exponential { rate } => rand_distr::Exp::new(rate).expect("validated exponential").sample(rng),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match *self {
            Self::Normal { mean, sd } => std_normal_cdf((x - mean) / sd),
            Self::Uniform { lo, hi } => {
                if x < lo {
                    0.0
                } else if x >= hi {
                    1.0
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            Self::Gamma { mu, phi } => {
                if x <= 0.0 {
                    0.0
                } else if x.is_infinite() {
                    1.0
                } else {
                    gamma::gamma_lr(1.0 / phi, x / (mu * phi))
                }
            }
            Self::Beta { a, b } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    beta::beta_reg(a, b, x)
                }
            }
            Self::StudentT { loc, scale, df } => student_t_cdf((x - loc) / scale, df),
            Self::Bernoulli { p } => {
                if x < 0.0 {
                    0.0
                } else if x < 1.0 {
                    1.0 - p
                } else {
                    1.0
                }
            }
            Self::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
        }
    }

    /// Density (continuous kinds) or mass (Bernoulli).
    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
            }
            Self::Uniform { lo, hi } => {
                if x >= lo && x <= hi && hi > lo {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Self::Gamma { mu, phi } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let k = 1.0 / phi;
                let theta = mu * phi;
                ((k - 1.0) * x.ln() - x / theta - gamma::ln_gamma(k) - k * theta.ln()).exp()
            }
            Self::Beta { a, b } => {
                if x <= 0.0 || x >= 1.0 {
                    return 0.0;
                }
                ((a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - beta::ln_beta(a, b)).exp()
            }
            Self::StudentT { loc, scale, df } => {
                let t = (x - loc) / scale;
                let ln = gamma::ln_gamma((df + 1.0) / 2.0)
                    - gamma::ln_gamma(df / 2.0)
                    - 0.5 * (df * std::f64::consts::PI).ln()
                    - (df + 1.0) / 2.0 * (t * t / df).ln_1p();
                ln.exp() / scale
            }
            Self::Bernoulli { p } => {
                if x == 1.0 {
                    p
                } else if x == 0.0 {
                    1.0 - p
                } else {
                    0.0
                }
            }
            Self::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * (-rate * x).exp()
                }
            }
        }
    }

    /// Inverse CDF on the open unit interval.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Domain(format!("quantile level {u} is outside (0, 1)")));
        }
        Ok(self.quantile_unchecked(u))
    }

    /// `quantile` without the domain check, for hot loops that construct
    /// `u` from a normal CDF and clamp it themselves.
    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        match *self {
            Self::Normal { mean, sd } => mean + sd * std_normal_quantile(u),
            Self::Uniform { lo, hi } => lo + (hi - lo) * u,
            Self::Exponential { rate } => -(-u).ln_1p() / rate,
            Self::Bernoulli { p } => {
                if u <= 1.0 - p {
                    0.0
                } else {
                    1.0
                }
            }
            Self::Gamma { mu, phi: 1.0 } => -mu * (-u).ln_1p(),
            Self::Gamma { mu, phi } => {
                let k = 1.0 / phi;
                // Wilson-Hilferty start.
                let z = std_normal_quantile(u);
                let c = 1.0 / (9.0 * k);
                let wh = k * (1.0 - c + z * c.sqrt()).powi(3);
                let start = if wh > 0.0 { wh * mu * phi } else { mu * u };
                solve_quantile(self, u, start, 0.0, f64::INFINITY)
            }
            Self::Beta { a, b } => {
                let start = a / (a + b);
                solve_quantile(self, u, start, 0.0, 1.0)
            }
            Self::StudentT { loc, scale, .. } => {
                let start = loc + scale * std_normal_quantile(u);
                solve_quantile(self, u, start, f64::NEG_INFINITY, f64::INFINITY)
            }
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match *self {
            Self::Normal { mean, .. } => Some(mean),
            Self::Uniform { lo, hi } => Some(0.5 * (lo + hi)),
            Self::Gamma { mu, .. } => Some(mu),
            Self::Beta { a, b } => Some(a / (a + b)),
            Self::StudentT { loc, df, .. } => (df > 1.0).then_some(loc),
            Self::Bernoulli { p } => Some(p),
            Self::Exponential { rate } => Some(1.0 / rate),
        }
    }
}

/// `count` i.i.d. draws from the start of `stream`.
pub fn draw(spec: &DistributionSpec, stream: &RandomStream, count: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = stream.rng();
    Ok((0..count).map(|_| spec.sample(&mut rng)).collect())
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(u: f64) -> f64 {
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if u >= 1.0 {
        return f64::INFINITY;
    }
    let mut z = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * u);
    // One Halley step polishes the rational approximation.
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 0.0 {
        let e = std_normal_cdf(z) - u;
        let step = e / pdf;
        z -= step / (1.0 + 0.5 * z * step);
    }
    z
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * beta::beta_reg(0.5 * df, 0.5, x);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Newton iteration on `cdf(x) = u`, falling back to bisection whenever a
/// step leaves the current bracket.
fn solve_quantile(spec: &DistributionSpec, u: f64, start: f64, lo: f64, hi: f64) -> f64 {
    let (mut lo, mut hi) = (lo, hi);
    // Make the bracket finite.
    let mut step = 1.0_f64.max(start.abs());
    while lo.is_infinite() {
        let cand = start - step;
        if spec.cdf(cand) <= u {
            lo = cand;
        } else {
            hi = hi.min(cand);
            step *= 2.0;
        }
    }
    step = 1.0_f64.max(start.abs());
    while hi.is_infinite() {
        let cand = start.max(lo) + step;
        if spec.cdf(cand) >= u {
            hi = cand;
        } else {
            lo = lo.max(cand);
            step *= 2.0;
        }
    }
    let mut x = start.clamp(lo, hi);
    if !(x > lo && x < hi) {
        x = 0.5 * (lo + hi);
    }
    for _ in 0..200 {
        let f = spec.cdf(x) - u;
        if f.abs() < 1e-15 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if (hi - lo) <= 1e-15 * (1.0 + x.abs()) {
            return x;
        }
        let d = spec.pdf(x);
        let newton = if d > 0.0 && d.is_finite() { x - f / d } else { f64::NAN };
        x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_sd(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, var.sqrt())
    }

    #[test]
    fn degenerate_uniform_draws_zero() {
        let v = draw(&DistributionSpec::Uniform { lo: 0.0, hi: 0.0 }, &RandomStream::new(1), 100).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normal_moments_large_sample() {
        let v = draw(&DistributionSpec::STANDARD_NORMAL, &RandomStream::new(11), 1_000_000).unwrap();
        let (m, sd) = mean_sd(&v);
        assert!(m.abs() < 0.01, "mean {m}");
        assert!((sd - 1.0).abs() < 0.01, "sd {sd}");
    }

    #[test]
    fn bernoulli_fraction() {
        let v = draw(&DistributionSpec::Bernoulli { p: 0.5 }, &RandomStream::new(5), 100_000).unwrap();
        let f = v.iter().sum::<f64>() / v.len() as f64;
        assert!((0.49..=0.51).contains(&f), "{f}");
    }

    #[test]
    fn invalid_parameters_rejected() {
        for spec in [
            DistributionSpec::Normal { mean: 0.0, sd: 0.0 },
            DistributionSpec::Uniform { lo: 1.0, hi: 0.0 },
            DistributionSpec::Gamma { mu: 0.0, phi: 1.0 },
            DistributionSpec::Beta { a: 0.0, b: 0.25 },
            DistributionSpec::StudentT { loc: 0.0, scale: 1.0, df: 0.0 },
            DistributionSpec::Bernoulli { p: 1.5 },
            DistributionSpec::Exponential { rate: -1.0 },
        ] {
            assert!(matches!(draw(&spec, &RandomStream::new(0), 1), Err(Error::Config(_))), "{spec:?}");
        }
    }

    #[test]
    fn cdf_examples() {
        let n = DistributionSpec::STANDARD_NORMAL;
        assert_eq!(n.cdf(0.0), 0.5);
        assert!((n.cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-4);
        let e = DistributionSpec::Exponential { rate: 0.5 };
        assert!((e.cdf(2.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn normal_cdf_against_series() {
        // Maclaurin series of erf summed to convergence.
        fn erf_series(x: f64) -> f64 {
            let mut term = x;
            let mut sum = x;
            let mut n = 0.0;
            loop {
                n += 1.0;
                term *= -x * x / n;
                let add = term / (2.0 * n + 1.0);
                sum += add;
                if add.abs() < 1e-18 {
                    break;
                }
            }
            2.0 / std::f64::consts::PI.sqrt() * sum
        }
        for &z in &[-3.0, -1.2, -0.1, 0.4, 1.96, 2.5] {
            let oracle = 0.5 * (1.0 + erf_series(z / std::f64::consts::SQRT_2));
            assert!((std_normal_cdf(z) - oracle).abs() < 1e-10, "{z}");
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(DistributionSpec::STANDARD_NORMAL.quantile(0.5).unwrap(), 0.0);
        let g = DistributionSpec::Gamma { mu: 1.0, phi: 1.0 };
        assert!((g.quantile(0.5).unwrap() - 2f64.ln()).abs() < 1e-6);
        let t = DistributionSpec::StudentT { loc: 1.0, scale: 1.0, df: 5.0 };
        for x in [-2.0, 0.3, 4.0] {
            assert!((t.quantile(t.cdf(x)).unwrap() - x).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn quantile_domain_errors() {
        let n = DistributionSpec::STANDARD_NORMAL;
        for u in [0.0, 1.0, -0.1, 1.1, f64::NAN] {
            assert!(matches!(n.quantile(u), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn gamma_general_shape_round_trip() {
        let g = DistributionSpec::Gamma { mu: 1.3, phi: 0.4 };
        for i in 1..100 {
            let u = i as f64 / 100.0;
            let x = g.quantile(u).unwrap();
            assert!((g.cdf(x) - u).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn every_continuous_kind_inverts_on_grid() {
        let specs = [
            DistributionSpec::Normal { mean: -2.0, sd: 2.0 },
            DistributionSpec::Uniform { lo: -1.0, hi: 3.0 },
            DistributionSpec::Gamma { mu: 1.0, phi: 1.0 },
            DistributionSpec::Gamma { mu: 2.5, phi: 3.0 },
            DistributionSpec::Beta { a: 0.5, b: 0.25 },
            DistributionSpec::Beta { a: 2.0, b: 5.0 },
            DistributionSpec::StudentT { loc: 1.0, scale: 1.0, df: 3.0 },
            DistributionSpec::Exponential { rate: 0.5 },
        ];
        for spec in specs {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..100 {
                let u = (i as f64 + 0.5) / 100.0;
                let x = spec.quantile(u).unwrap();
                assert!(x >= prev, "{spec:?} not monotone");
                prev = x;
                assert!((spec.cdf(x) - u).abs() < 1e-8, "{spec:?} u={u} x={x} cdf={}", spec.cdf(x));
            }
        }
    }

    #[test]
    fn bernoulli_quantile_matches_latent_threshold() {
        let b = DistributionSpec::Bernoulli { p: 0.3 };
        let thr = std_normal_quantile(0.7);
        for z in [-1.0, 0.0, 0.5, 0.6, 2.0] {
            let observed = b.quantile(std_normal_cdf(z)).unwrap();
            assert_eq!(observed, if z > thr { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn expit_logit_inverse() {
        for x in [-15.0, -2.0, 0.0, 1.5, 15.0] {
            assert!((logit(expit(x)) - x).abs() < 1e-6 * (1.0 + x.abs()));
        }
        assert_eq!(expit(0.0), 0.5);
    }
}
