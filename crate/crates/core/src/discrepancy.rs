//! One-dimensional Wasserstein distance and its sliced multivariate
//! estimator over random unit directions.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::par::map_indexed;
use crate::rng::RandomStream;

fn default_projections() -> usize {
    100
}

fn default_order() -> u32 {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceConfig {
    #[serde(default = "default_projections")]
    pub n_projections: usize,
    /// `p` in `W_p`: 1 or 2.
    #[serde(default = "default_order")]
    pub order: u32,
    /// Scale columns by the source standardizer before projecting.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub projection_seed: u64,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            n_projections: default_projections(),
            order: default_order(),
            standardize: true,
            projection_seed: 0,
        }
    }
}

impl DistanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_projections == 0 {
            return Err(Error::Config("n_projections must be at least 1".into()));
        }
        if !matches!(self.order, 1 | 2) {
            return Err(Error::Config(format!("distance order must be 1 or 2, got {}", self.order)));
        }
        Ok(())
    }
}

/// Unit directions in the flattened `(covariates.., t, y)` space.
#[derive(Clone, Debug, PartialEq)]
pub struct Projections {
    dim: usize,
    directions: Vec<Vec<f64>>,
}

impl Projections {
    /// `count` directions uniform on the unit sphere.
    pub fn random(dim: usize, count: usize, stream: &RandomStream) -> Self {
        let mut rng = stream.rng();
        let directions = (0..count)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    break v.into_iter().map(|x| x / norm).collect();
                }
            })
            .collect();
        Self { dim, directions }
    }

    /// Coordinate axes, one projection per listed column.
    pub fn axes(dim: usize, columns: &[usize]) -> Result<Self> {
        let directions = columns
            .iter()
            .map(|&k| {
                if k >= dim {
                    return Err(Error::Config(format!("axis {k} outside a {dim}-column layout")));
                }
                let mut v = vec![0.0; dim];
                v[k] = 1.0;
                Ok(v)
            })
            .collect::<Result<_>>()?;
        Ok(Self { dim, directions })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[Vec<f64>] {
        &self.directions
    }
}

/// `W_p^p` between two sorted samples.
fn wasserstein_pow_sorted(a: &[f64], b: &[f64], order: u32) -> f64 {
    let cost = |d: f64| if order == 1 { d.abs() } else { d * d };
    let (n, m) = (a.len(), b.len());
    if n == m {
        return a.iter().zip(b).map(|(x, y)| cost(x - y)).sum::<f64>() / n as f64;
    }
    // Piecewise-constant quantile functions on the merged grid {i/n} U {j/m},
    // measured in units of 1/(n m) so breakpoints compare exactly.
    let (nn, mm) = (n as u128, m as u128);
    let total = (nn * mm) as f64;
    let (mut i, mut j, mut prev) = (0usize, 0usize, 0u128);
    let mut acc = 0.0;
    while i < n && j < m {
        let next_a = (i as u128 + 1) * mm;
        let next_b = (j as u128 + 1) * nn;
        let next = next_a.min(next_b);
        acc += (next - prev) as f64 / total * cost(a[i] - b[j]);
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    acc
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    s
}

/// Exact `W_p` between the empirical distributions of `a` and `b`.
pub fn wasserstein_1d(a: &[f64], b: &[f64], order: u32) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("wasserstein_1d needs two nonempty samples".into()));
    }
    if !matches!(order, 1 | 2) {
        return Err(Error::Config(format!("distance order must be 1 or 2, got {order}")));
    }
    let w = wasserstein_pow_sorted(&sorted(a), &sorted(b), order);
    Ok(if order == 1 { w } else { w.sqrt() })
}

/// Per-column `(mean, sd)` used before projecting.
fn affine_for(dim: usize, standardizer: Option<&Standardizer>) -> Vec<(f64, f64)> {
    (0..dim).map(|k| standardizer.map_or((0.0, 1.0), |s| s.flat_affine(k))).collect()
}

/// Sorted projections of every row of `d`, one vector per direction.
fn project_sorted(d: &Dataset, projections: &Projections, affine: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let cols: Vec<&[f64]> = (0..d.width()).map(|k| d.flat_column(k)).collect();
    map_indexed(projections.len(), |p| {
        let dir = &projections.directions[p];
        let mut out = vec![0.0; d.n()];
        for (k, col) in cols.iter().enumerate() {
            let (m, s) = affine[k];
            let c = dir[k] / s;
            if c == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(col.iter()) {
                *o += c * (x - m);
            }
        }
        sort_floats(&mut out);
        out
    })
}

/// Sorts by IEEE total order: LSD radix sort over order-preserving integer
/// keys, skipping bytes on which every key agrees.
fn sort_floats(v: &mut [f64]) {
    const SIGN: u64 = 1 << 63;
    let keys: Vec<u64> = v
        .iter()
        .map(|x| {
            let b = x.to_bits();
            if b & SIGN != 0 {
                !b
            } else {
                b | SIGN
            }
        })
        .collect();
    let keys = radix_sort(keys);
    for (x, k) in v.iter_mut().zip(keys) {
        *x = f64::from_bits(if k & SIGN != 0 { k & !SIGN } else { !k });
    }
}

fn radix_sort(mut keys: Vec<u64>) -> Vec<u64> {
    let mut counts = [[0usize; 256]; 8];
    for k in &keys {
        for (b, c) in counts.iter_mut().enumerate() {
            c[((k >> (8 * b)) & 0xff) as usize] += 1;
        }
    }
    let mut buf = vec![0u64; keys.len()];
    for (b, c) in counts.iter().enumerate() {
        if c.contains(&keys.len()) {
            continue;
        }
        let mut offsets = [0usize; 256];
        let mut acc = 0;
        for (o, n) in offsets.iter_mut().zip(c) {
            *o = acc;
            acc += n;
        }
        for &k in &keys {
            let d = ((k >> (8 * b)) & 0xff) as usize;
            buf[offsets[d]] = k;
            offsets[d] += 1;
        }
        std::mem::swap(&mut keys, &mut buf);
    }
    keys
}

fn combine(pows: &[f64], order: u32) -> f64 {
    let m = pows.iter().sum::<f64>() / pows.len() as f64;
    if order == 1 {
        m
    } else {
        m.sqrt()
    }
}

/// A dataset projected and sorted once, to be compared against many others
/// under the same directions.
#[derive(Clone, Debug)]
pub struct ProjectedReference {
    projections: Projections,
    affine: Vec<(f64, f64)>,
    order: u32,
    sorted: Vec<Vec<f64>>,
    reference: Dataset,
}

impl ProjectedReference {
    pub fn new(reference: &Dataset, projections: Projections, standardizer: Option<&Standardizer>, order: u32) -> Result<Self> {
        if projections.dim() != reference.width() {
            return Err(Error::SchemaMismatch(format!(
                "projections span {} columns, dataset has {}",
                projections.dim(),
                reference.width()
            )));
        }
        if projections.is_empty() {
            return Err(Error::Config("at least one projection is required".into()));
        }
        let affine = affine_for(reference.width(), standardizer);
        let sorted = project_sorted(reference, &projections, &affine);
        Ok(Self {
            projections,
            affine,
            order,
            sorted,
            reference: reference.clone(),
        })
    }

    pub fn distance(&self, other: &Dataset) -> Result<f64> {
        self.reference.ensure_same_schema(other)?;
        let theirs = project_sorted(other, &self.projections, &self.affine);
        let pows: Vec<f64> = self.sorted.iter().zip(&theirs).map(|(a, b)| wasserstein_pow_sorted(a, b, self.order)).collect();
        Ok(combine(&pows, self.order))
    }
}

/// Sliced `W_p` between two datasets under explicit directions.
pub fn sliced_wasserstein_with(a: &Dataset, b: &Dataset, projections: &Projections, standardizer: Option<&Standardizer>, order: u32) -> Result<f64> {
    a.ensure_same_schema(b)?;
    let r = ProjectedReference::new(a, projections.clone(), standardizer, order)?;
    r.distance(b)
}

/// Sliced `W_p` with `cfg.n_projections` directions drawn from
/// `cfg.projection_seed`.
pub fn sliced_wasserstein(a: &Dataset, b: &Dataset, cfg: &DistanceConfig, standardizer: &Standardizer) -> Result<f64> {
    cfg.validate()?;
    a.ensure_same_schema(b)?;
    let projections = Projections::random(a.width(), cfg.n_projections, &RandomStream::new(cfg.projection_seed));
    sliced_wasserstein_with(a, b, &projections, cfg.standardize.then_some(standardizer), cfg.order)
}
