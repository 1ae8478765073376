//! Quality metrics for generated data: cross-validated classifier AUC
//! against the source, and the mean bias-squared-error of ATE estimators.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{estimate_ate, AteEstimate, EstimatorId, LearnerConfig};
use crate::rng::RandomStream;
use crate::simulators::GeneratedDataset;
pub use crate::tree::{rf_fit, rf_predict_proba, ClassifierConfig, RandomForest};

/// Area under the ROC curve as the Mann-Whitney statistic with midranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Domain(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Domain(format!("score {s} is not a number")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Domain("roc_auc needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the positives, kept integral so that
    // complementary labellings add to exactly one.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the midrank (i+j+2)/2.
        let twice_mid = (i + j + 2) as u128;
        let k = idx[i..=j].iter().filter(|&&t| labels[t]).count() as u128;
        rank2_sum += k * twice_mid;
        i = j + 1;
    }
    let (p, q) = (pos as u128, neg as u128);
    // U = R - p(p+1)/2, with everything doubled.
    let u2 = rank2_sum - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

fn flat_columns(d: &Dataset) -> Vec<Vec<f64>> {
    (0..d.width()).map(|k| d.flat_column(k).to_vec()).collect()
}

/// Stratified fold assignment in which identical rows share a fold, so an
/// exact copy never sits on the other side of a split with the opposite
/// label. Groups are visited in shuffled order and each joins the fold
/// holding the fewest rows of its majority class.
fn grouped_stratified_folds(x: &[Vec<f64>], labels: &[bool], k: usize, stream: &RandomStream) -> Vec<usize> {
    let n = labels.len();
    let mut by_row: std::collections::HashMap<Vec<u64>, Vec<usize>> = std::collections::HashMap::new();
    for i in 0..n {
        let key: Vec<u64> = x.iter().map(|c| c[i].to_bits()).collect();
        by_row.entry(key).or_default().push(i);
    }
    // First-occurrence order keeps the result independent of hashing.
    let mut firsts: Vec<(usize, Vec<usize>)> = by_row.into_values().map(|g| (g[0], g)).collect();
    firsts.sort_unstable_by_key(|(f, _)| *f);
    let mut groups: Vec<Vec<usize>> = firsts.into_iter().map(|(_, g)| g).collect();
    groups.shuffle(&mut stream.rng());
    let mut count = vec![[0usize; 2]; k];
    let mut fold = vec![0; n];
    for g in groups {
        let ones = g.iter().filter(|&&i| labels[i]).count();
        let class = usize::from(2 * ones >= g.len());
        let f = (0..k).min_by_key(|&f| (count[f][class], f)).expect("k >= 2");
        for &i in &g {
            fold[i] = f;
            count[f][usize::from(labels[i])] += 1;
        }
    }
    fold
}

/// Out-of-fold AUC of a random forest separating `generated` (label 1)
/// from `source` (label 0), over every column including treatment and
/// outcome.
pub fn dataset_auc(generated: &Dataset, source: &Dataset, cfg: &ClassifierConfig, stream: &RandomStream) -> Result<f64> {
    cfg.validate()?;
    source.ensure_same_schema(generated)?;
    let (g, s) = (flat_columns(generated), flat_columns(source));
    let x: Vec<Vec<f64>> = g.iter().zip(&s).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
    let labels: Vec<bool> = (0..generated.n() + source.n()).map(|i| i < generated.n()).collect();
    let k = cfg.folds;
    if generated.n() < k || source.n() < k {
        return Err(Error::Dataset(format!("each class needs at least {k} rows for {k}-fold cross-validation")));
    }
    let folds = grouped_stratified_folds(&x, &labels, k, &stream.derive(&[0]));
    let mut scores = vec![0.0; labels.len()];
    for f in 0..k {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| folds[i] == f);
        let pick = |ix: &[usize]| -> Vec<Vec<f64>> { x.iter().map(|c| ix.iter().map(|&i| c[i]).collect()).collect() };
        let train_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let forest = rf_fit(&pick(&train), &train_labels, cfg, &stream.derive(&[1, f as u64]))?;
        for (&i, p) in test.iter().zip(rf_predict_proba(&forest, &pick(&test))) {
            scores[i] = p;
        }
    }
    roc_auc(&scores, &labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub mean: f64,
    pub sd: f64,
    pub per_dataset: Vec<f64>,
}

impl AucReport {
    pub fn from_values(per_dataset: Vec<f64>) -> Self {
        let (mean, sd) = mean_sd(&per_dataset);
        Self { mean, sd, per_dataset }
    }
}

/// Mean and sample standard deviation (0 for a single value).
fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// One cross-validated AUC per generated dataset, summarised. Dataset `i`
/// uses the stream `(cfg.seed, i)`.
pub fn classifier_auc(generated: &[GeneratedDataset], source: &Dataset, cfg: &ClassifierConfig) -> Result<AucReport> {
    if generated.is_empty() {
        return Err(Error::Config("classifier_auc needs at least one generated dataset".into()));
    }
    let root = RandomStream::new(cfg.seed);
    let values = crate::par::map_indexed(generated.len(), |i| dataset_auc(&generated[i].dataset, source, cfg, &root.derive(&[i as u64])));
    Ok(AucReport::from_values(values.into_iter().collect::<Result<_>>()?))
}

/// Mean BSE of one estimator over one regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BseSummary {
    /// `None` when every estimate failed.
    pub mean_bse: Option<f64>,
    pub n_used: usize,
    pub n_failed: usize,
    /// `estimate - tau_star` per dataset; `None` where estimation failed.
    pub biases: Vec<Option<f64>>,
}

/// `(1/N) sum_i (b_i - s_i)^2` over datasets whose estimate succeeded,
/// where `b_i` is the dataset's bias and `s_i` the matching source bias.
pub fn mean_bse_terms(biases: &[Option<f64>], source_biases: &[f64]) -> Result<BseSummary> {
    if biases.is_empty() {
        return Err(Error::Config("mean BSE needs at least one dataset".into()));
    }
    if source_biases.len() != biases.len() {
        return Err(Error::Config(format!("{} source biases for {} datasets", source_biases.len(), biases.len())));
    }
    let terms: Vec<f64> = biases.iter().zip(source_biases).filter_map(|(b, s)| b.map(|b| (b - s).powi(2))).collect();
    let n_used = terms.len();
    Ok(BseSummary {
        mean_bse: (n_used > 0).then(|| terms.iter().sum::<f64>() / n_used as f64),
        n_used,
        n_failed: biases.len() - n_used,
        biases: biases.to_vec(),
    })
}

/// Mean BSE against a single source estimate.
pub fn mean_bse(estimates: &[Option<f64>], tau_stars: &[f64], source_estimate: f64, source_tau_star: f64) -> Result<BseSummary> {
    if estimates.len() != tau_stars.len() {
        return Err(Error::Config(format!("{} estimates for {} tau values", estimates.len(), tau_stars.len())));
    }
    let biases: Vec<Option<f64>> = estimates.iter().zip(tau_stars).map(|(e, t)| e.map(|e| e - t)).collect();
    mean_bse_terms(&biases, &vec![source_estimate - source_tau_star; biases.len()])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorBse {
    pub estimator: EstimatorId,
    /// `None` when the estimator failed on the source itself.
    pub source_bias: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_failure: Option<String>,
    pub posterior: BseSummary,
    pub prior: BseSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BseReport {
    pub entries: Vec<EstimatorBse>,
}

impl BseReport {
    pub fn get(&self, id: EstimatorId) -> Option<&EstimatorBse> {
        self.entries.iter().find(|e| e.estimator == id)
    }
}

/// Runs every estimator on the source and on each generated dataset, then
/// scores both regimes.
pub fn bse_report(
    source: &Dataset,
    source_tau_star: f64,
    posterior: &[GeneratedDataset],
    prior: &[GeneratedDataset],
    ids: &[EstimatorId],
    cfg: &LearnerConfig,
) -> Result<BseReport> {
    if posterior.is_empty() || prior.is_empty() {
        return Err(Error::Config("each regime needs at least one dataset".into()));
    }
    let all: Vec<&Dataset> = std::iter::once(source)
        .chain(posterior.iter().map(|g| &g.dataset))
        .chain(prior.iter().map(|g| &g.dataset))
        .collect();
    let k = ids.len();
    let estimates: Vec<AteEstimate> = crate::par::map_indexed(all.len() * k, |j| estimate_ate(all[j / k], ids[j % k], cfg));
    let mut entries = Vec::with_capacity(k);
    for (e, &id) in ids.iter().enumerate() {
        let at = |d: usize| &estimates[d * k + e];
        let src = at(0);
        let source_bias = src.value.map(|v| v - source_tau_star);
        let regime = |offset: usize, set: &[GeneratedDataset]| -> Result<BseSummary> {
            let biases: Vec<Option<f64>> = set
                .iter()
                .enumerate()
                .map(|(i, g)| match (at(offset + i).value, source_bias) {
                    (Some(v), Some(_)) => Some(v - g.tau_star),
                    _ => None,
                })
                .collect();
            mean_bse_terms(&biases, &vec![source_bias.unwrap_or(0.0); set.len()])
        };
        entries.push(EstimatorBse {
            estimator: id,
            source_bias,
            source_failure: src.failure.clone(),
            posterior: regime(1, posterior)?,
            prior: regime(1 + posterior.len(), prior)?,
        });
    }
    Ok(BseReport { entries })
}
