//! Named data-generating processes and simulators with their priors.

use super::{FrugalConfig, FrugalCovariate, LinearModel, Propensity, PropensityTerm, SimulatorVariant, ThetaVector};
use crate::copula::CorrelationMatrix;
use crate::dist::DistributionSpec;
use crate::smc::PriorSpec;

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub id: &'static str,
    pub description: &'static str,
    pub variant: SimulatorVariant,
    /// Ground-truth parameters; the source dataset is simulated here.
    pub reference: ThetaVector,
    /// `None` for entries that only serve as source generators.
    pub prior: Option<PriorSpec>,
    /// Entry that generates this simulator's source data at its own
    /// reference parameters.
    pub source_id: Option<&'static str>,
}

impl CatalogEntry {
    pub fn parameter_names(&self) -> Vec<String> {
        match &self.variant {
            SimulatorVariant::Linear(m) => m.parameter_names(),
            SimulatorVariant::Frugal(f) => f.parameter_names(),
            SimulatorVariant::External(e) => e.parameter_names.clone(),
        }
    }
}

fn theta(pairs: &[(&str, f64)]) -> ThetaVector {
    ThetaVector::new(pairs.iter().map(|&(n, v)| (n.to_string(), v)).collect()).expect("catalog values are finite")
}

fn rbt(r: f64, b: f64, t: f64) -> ThetaVector {
    theta(&[("rho", r), ("beta", b), ("tau", t)])
}

fn cube(lo: f64, hi: f64) -> PriorSpec {
    PriorSpec::uniform(&[("rho", lo, hi), ("beta", lo, hi), ("tau", lo, hi)])
}

fn linear(
    id: &'static str,
    description: &'static str,
    model: LinearModel,
    reference: ThetaVector,
    prior: Option<PriorSpec>,
    source_id: Option<&'static str>,
) -> CatalogEntry {
    CatalogEntry {
        id,
        description,
        variant: SimulatorVariant::Linear(model),
        reference,
        prior,
        source_id,
    }
}

fn corr(rows: &[&[f64]]) -> CorrelationMatrix {
    CorrelationMatrix::new(rows.iter().map(|r| r.to_vec()).collect()).expect("catalog matrices are valid")
}

fn cov(name: &str, margin: DistributionSpec) -> FrugalCovariate {
    FrugalCovariate {
        name: name.into(),
        margin,
        hidden: false,
    }
}

fn hide(mut covariates: Vec<FrugalCovariate>, names: &[&str]) -> Vec<FrugalCovariate> {
    for c in &mut covariates {
        c.hidden = names.contains(&c.name.as_str());
    }
    covariates
}

fn term(coef: f64, factors: &[usize]) -> PropensityTerm {
    PropensityTerm {
        coef,
        factors: factors.to_vec(),
    }
}

/// Frugal DGP1/2 covariates `Z1, Z2, X1, X2, X3`. `X2 ~ Beta(0, 0.25)` is
/// not a valid law; `Beta(0.5, 0.25)` stands in for it, and the Student-t
/// margin uses 3 degrees of freedom.
fn frugal_12(correlation: CorrelationMatrix) -> FrugalConfig {
    use DistributionSpec::*;
    FrugalConfig {
        covariates: hide(
            vec![
                cov("z1", Beta { a: 1.0, b: 1.0 }),
                cov("z2", Normal { mean: 1.0, sd: 0.5 }),
                cov("x1", Normal { mean: -2.0, sd: 2.0 }),
                cov("x2", Beta { a: 0.5, b: 0.25 }),
                cov("x3", StudentT { loc: 1.0, scale: 1.0, df: 3.0 }),
            ],
            &["z1", "z2"],
        ),
        propensity: Propensity {
            intercept: 0.5,
            terms: vec![
                term(0.4, &[2]),
                term(0.3, &[0]),
                term(1.0, &[2, 0]),
                term(1.0, &[3]),
                term(1.5, &[4]),
                term(2.5, &[4]),
                term(-0.5, &[2, 4]),
                term(1.0, &[1]),
            ],
        },
        outcome_intercept: 0.0,
        outcome_sd: 1.0,
        correlation,
        rho_override: false,
    }
}

fn r1() -> CorrelationMatrix {
    let mut rows = vec![vec![0.8; 6]; 6];
    for (i, r) in rows.iter_mut().enumerate() {
        r[i] = 1.0;
    }
    CorrelationMatrix::new(rows).expect("valid")
}

fn r2() -> CorrelationMatrix {
    corr(&[
        &[1.0, 0.8, 0.2, 0.3, 0.2, 0.7],
        &[0.8, 1.0, 0.1, 0.4, 0.9, 0.3],
        &[0.2, 0.1, 1.0, 0.5, 0.8, 0.1],
        &[0.3, 0.4, 0.5, 1.0, 0.9, 0.5],
        &[0.2, 0.9, 0.8, 0.9, 1.0, 0.6],
        &[0.7, 0.3, 0.1, 0.5, 0.6, 1.0],
    ])
}

pub(crate) fn r3() -> CorrelationMatrix {
    corr(&[&[1.0, 0.0, 0.0, -0.5], &[0.0, 1.0, 0.0, -0.3], &[0.0, 0.0, 1.0, 0.9], &[-0.5, -0.3, 0.9, 1.0]])
}

pub(crate) fn r4() -> CorrelationMatrix {
    corr(&[
        &[1.0, 0.5, 0.3, 0.1, 0.8],
        &[0.5, 1.0, 0.4, 0.1, 0.8],
        &[0.3, 0.4, 1.0, 0.1, 0.8],
        &[0.1, 0.1, 0.1, 1.0, 0.8],
        &[0.8, 0.8, 0.8, 0.8, 1.0],
    ])
}

/// `R5` couples the ten covariates; the causal margin is uncorrelated with
/// them (the matrix has no row for it). The published matrix disagrees with
/// its transpose at (5,6) and (6,8); the upper triangle is used.
fn r5() -> CorrelationMatrix {
    let block: [[f64; 10]; 10] = [
        [1.0, 0.3, 0.4, 0.5, 0.1, -0.2, -0.7, 0.5, -0.4, 0.5],
        [0.3, 1.0, -0.3, 0.6, -0.3, 0.4, -0.4, 0.6, 0.3, 0.2],
        [0.4, -0.3, 1.0, -0.5, 0.2, -0.1, -0.1, 0.0, -0.4, -0.4],
        [0.5, 0.6, -0.5, 1.0, -0.2, -0.2, -0.5, 0.5, 0.3, 0.4],
        [0.1, -0.3, 0.2, -0.2, 1.0, -0.1, -0.1, -0.5, -0.6, -0.2],
        [-0.2, 0.4, -0.1, -0.2, -0.2, 1.0, 0.0, 0.4, 0.2, 0.5],
        [-0.7, -0.4, -0.1, -0.5, -0.1, 0.0, 1.0, -0.5, 0.4, -0.4],
        [0.5, 0.6, 0.0, 0.5, -0.5, 0.5, -0.5, 1.0, 0.4, 0.4],
        [-0.4, 0.3, -0.4, 0.3, -0.6, 0.2, 0.4, 0.4, 1.0, 0.4],
        [0.5, 0.2, -0.4, 0.4, -0.2, 0.5, -0.4, 0.4, 0.4, 1.0],
    ];
    let rows = (0..11)
        .map(|i| {
            (0..11)
                .map(|j| match (i.min(j), i.max(j)) {
                    (a, b) if b < 10 => block[a][b],
                    (a, b) if a == b => 1.0,
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    CorrelationMatrix::new(rows).expect("valid")
}

fn frugal_3(hidden: &[&str], rho_override: bool) -> FrugalConfig {
    use DistributionSpec::*;
    FrugalConfig {
        covariates: hide(
            vec![
                cov("x1", Normal { mean: 2.0, sd: 1.0 }),
                cov("x2", Gamma { mu: 1.0, phi: 1.0 }),
                cov("x3", Normal { mean: 3.0, sd: 1.0 }),
            ],
            hidden,
        ),
        propensity: Propensity {
            intercept: 0.0,
            terms: vec![term(-0.3, &[0]), term(0.3, &[1]), term(-0.4, &[2]), term(-0.1, &[0, 1])],
        },
        outcome_intercept: 0.0,
        outcome_sd: 1.5,
        correlation: r3(),
        rho_override,
    }
}

pub(crate) fn frugal_4(hidden: &[&str], rho_override: bool) -> FrugalConfig {
    FrugalConfig {
        covariates: hide(
            (1..=4).map(|j| cov(&format!("x{j}"), DistributionSpec::Gamma { mu: 1.0, phi: 1.0 })).collect(),
            hidden,
        ),
        propensity: Propensity::linear(-2.0, &[1.0; 4]),
        outcome_intercept: 0.5,
        outcome_sd: 1.0,
        correlation: r4(),
        rho_override,
    }
}

fn frugal_5(hidden: &[&str], rho_override: bool) -> FrugalConfig {
    let covariates = (1..=10)
        .map(|j| {
            let margin = if j <= 5 {
                DistributionSpec::Gamma { mu: 1.3, phi: 1.0 }
            } else {
                DistributionSpec::Bernoulli { p: 0.5 }
            };
            cov(&format!("x{j}"), margin)
        })
        .collect();
    FrugalConfig {
        covariates: hide(covariates, hidden),
        propensity: Propensity::linear(-0.3, &[0.1, 0.2, 0.5, -0.2, 1.0, 0.3, -0.4, 0.7, -0.1, 0.9]),
        outcome_intercept: 2.5,
        outcome_sd: 1.0,
        correlation: r5(),
        rho_override,
    }
}

fn frugal(
    id: &'static str,
    description: &'static str,
    cfg: FrugalConfig,
    reference: ThetaVector,
    prior: Option<PriorSpec>,
    source_id: Option<&'static str>,
) -> CatalogEntry {
    CatalogEntry {
        id,
        description,
        variant: SimulatorVariant::Frugal(cfg),
        reference,
        prior,
        source_id,
    }
}

/// Every builtin source generator, simulator, and identity fixture.
pub fn builtin_catalog() -> Vec<CatalogEntry> {
    use LinearModel::*;
    let truth1 = || rbt(1.0, -1.5, 1.5);
    let wide = || cube(-5.0, 5.0);
    let tau = |t: f64| theta(&[("tau", t)]);
    let tau_rho = |t: f64, r: f64| theta(&[("tau", t), ("rho", r)]);
    let tau_rho_prior = |lo: f64, hi: f64| PriorSpec::uniform(&[("tau", lo, hi), ("rho", -1.0, 1.0)]);
    vec![
        linear("dgp1", "linear DGP with hidden Gaussian confounder", Dgp1, truth1(), None, None),
        linear("dgp5", "polynomial outcome DGP", Dgp5, truth1(), None, None),
        linear("dgp6", "binary confounder with deterministic treatment", Dgp6, rbt(2.0, 0.5, 2.0), None, None),
        linear("dgp6_sim7", "dgp6 equations at the Sim7 truth", Dgp6, rbt(1.0, 0.3, 2.0), None, None),
        linear("dgp6_sim9", "dgp6 equations at the Sim9 truth", Dgp6, rbt(1.0, 0.3, 1.0), None, None),
        linear("dgp8", "dgp6 with X entering the treatment", Dgp8, rbt(1.0, 0.3, 2.0), None, None),
        linear("dgp10", "dgp1 equations, paired with excluding priors", Dgp1, truth1(), None, None),
        linear("dgp11", "three covariates, expit propensity", Dgp11, tau(3.0), None, None),
        linear(
            "sim1",
            "correctly specified linear simulator",
            Sim1,
            truth1(),
            Some(PriorSpec::uniform(&[("rho", 0.0, 2.0), ("beta", -2.0, 1.0), ("tau", 0.0, 2.0)])),
            Some("dgp1"),
        ),
        linear("sim2", "noisy outcome simulator", Sim2, truth1(), Some(wide()), Some("dgp1")),
        linear("sim3", "exponential confounder simulator", Sim3, truth1(), Some(wide()), Some("dgp1")),
        linear("sim4", "simulator with an X*Z interaction", Sim4, truth1(), Some(wide()), Some("dgp1")),
        linear(
            "sim5",
            "linear simulator against the polynomial DGP",
            Sim1,
            truth1(),
            Some(wide()),
            Some("dgp5"),
        ),
        linear(
            "sim6",
            "non-identifiable rho and tau",
            Sim6,
            rbt(2.0, 0.5, 2.0),
            Some(cube(0.0, 10.0)),
            Some("dgp6"),
        ),
        linear(
            "sim7",
            "sim6 with the joint prior rho + tau = 3",
            Sim6,
            rbt(1.0, 0.3, 2.0),
            Some(PriorSpec::uniform(&[("rho", -5.0, 5.0), ("beta", 0.0, 5.0), ("tau", -20.0, 20.0)]).with_constraint(&[("rho", 1.0), ("tau", 1.0)], 3.0)),
            Some("dgp6_sim7"),
        ),
        linear(
            "sim8",
            "partially identifiable rho and tau",
            Sim8,
            rbt(1.0, 0.3, 2.0),
            Some(cube(0.0, 10.0)),
            Some("dgp8"),
        ),
        linear("sim9", "narrow priors", Sim9, rbt(1.0, 0.3, 1.0), Some(cube(0.0, 2.0)), Some("dgp6_sim9")),
        linear(
            "sim10",
            "priors excluding the truth",
            Sim1,
            truth1(),
            Some(PriorSpec::uniform(&[("rho", -2.0, 0.0), ("beta", 0.0, 2.0), ("tau", -2.0, 0.0)])),
            Some("dgp10"),
        ),
        linear(
            "sim11",
            "three-covariate simulator over tau",
            Sim11,
            tau(3.0),
            Some(PriorSpec::uniform(&[("tau", -10.0, 10.0)])),
            Some("dgp11"),
        ),
        linear("c1", "identity fixture: expit propensity, Y = X + T", C1, ThetaVector::default(), None, None),
        linear("c2", "identity fixture: C1 plus heteroscedastic noise", C2, ThetaVector::default(), None, None),
        linear("c3", "identity fixture: Bernoulli auxiliary", C3, ThetaVector::default(), None, None),
        linear("c4", "identity fixture: Gaussian auxiliary", C4, ThetaVector::default(), None, None),
        frugal(
            "frugal_dgp1",
            "frugal R1 model, Z1 and Z2 unobserved (approximate margins)",
            frugal_12(r1()),
            tau(3.0),
            None,
            None,
        ),
        frugal(
            "frugal_dgp2",
            "frugal R2 model, Z1 and Z2 unobserved (approximate margins)",
            frugal_12(r2()),
            tau(3.0),
            None,
            None,
        ),
        frugal("frugal_dgp3", "frugal R3 model", frugal_3(&[], false), tau(5.0), None, None),
        frugal("frugal_dgp4", "frugal R4 model with Gamma margins", frugal_4(&[], false), tau(5.0), None, None),
        frugal("frugal_dgp5", "frugal R5 model, mixed margins", frugal_5(&[], false), tau(-5.0), None, None),
        frugal(
            "frugal_sim3u",
            "frugal R3 model, X2 unobserved, rho its margin correlation",
            frugal_3(&["x2"], true),
            tau_rho(5.0, -0.3),
            Some(tau_rho_prior(0.0, 10.0)),
            Some("frugal_sim3u"),
        ),
        frugal(
            "frugal_sim4u",
            "frugal R4 model, X4 unobserved, rho its margin correlation",
            frugal_4(&["x4"], true),
            tau_rho(5.0, 0.8),
            Some(tau_rho_prior(-20.0, 20.0)),
            Some("frugal_sim4u"),
        ),
        frugal(
            "frugal_sim5u",
            "frugal R5 model, X3 and X7 unobserved, rho their margin correlation",
            frugal_5(&["x3", "x7"], true),
            tau_rho(-5.0, 0.0),
            Some(tau_rho_prior(-20.0, 20.0)),
            Some("frugal_sim5u"),
        ),
    ]
}

pub fn catalog_entry(id: &str) -> Option<CatalogEntry> {
    builtin_catalog().into_iter().find(|e| e.id == id)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::rng::RandomStream;
    use crate::simulators::{simulate, SimulatorConfig};

    fn source_for(entry: &CatalogEntry, n: usize) -> Option<Arc<crate::dataset::Dataset>> {
        let src = catalog_entry(entry.source_id?).unwrap();
        let cfg = SimulatorConfig::new(src.variant.clone(), n, None).ok()?;
        Some(Arc::new(simulate(&cfg, &src.reference, &RandomStream::new(1)).unwrap().dataset))
    }

    #[test]
    fn sim6_entry_has_the_documented_truth_and_prior() {
        let e = catalog_entry("sim6").unwrap();
        assert_eq!(e.reference, rbt(2.0, 0.5, 2.0));
        let p = e.prior.unwrap();
        for b in &p.parameters {
            assert_eq!((b.lo, b.hi), (0.0, 10.0));
        }
    }

    #[test]
    fn identity_fixtures_have_no_parameters() {
        for id in ["c1", "c2", "c3", "c4"] {
            assert!(catalog_entry(id).unwrap().parameter_names().is_empty());
        }
    }

    #[test]
    fn ids_unique_and_consistent() {
        let cat = builtin_catalog();
        for (i, e) in cat.iter().enumerate() {
            assert!(cat[..i].iter().all(|o| o.id != e.id), "duplicate {}", e.id);
            e.reference.check_names(&e.parameter_names()).unwrap();
            if let Some(p) = &e.prior {
                p.validate().unwrap();
                let mut names = p.names();
                let mut want = e.parameter_names();
                names.sort();
                want.sort();
                assert_eq!(names, want, "{}", e.id);
            }
            if let Some(s) = e.source_id {
                assert!(catalog_entry(s).is_some(), "{} -> {s}", e.id);
            }
        }
    }

    #[test]
    fn every_entry_simulates_at_n_100() {
        for e in builtin_catalog() {
            let source = source_for(&e, 100);
            let cfg = SimulatorConfig::new(e.variant.clone(), 100, source).unwrap_or_else(|err| panic!("{}: {err}", e.id));
            let g = simulate(&cfg, &e.reference, &RandomStream::new(2)).unwrap_or_else(|err| panic!("{}: {err}", e.id));
            assert_eq!(g.dataset.n(), 100, "{}", e.id);
        }
    }

    #[test]
    fn self_sourced_frugal_entries_drop_hidden_columns() {
        let e = catalog_entry("frugal_sim4u").unwrap();
        let cfg = SimulatorConfig::new(e.variant, 50, None).unwrap();
        let g = simulate(&cfg, &e.reference, &RandomStream::new(0)).unwrap();
        assert_eq!(g.dataset.covariate_names(), &["x1", "x2", "x3"]);
    }
}
