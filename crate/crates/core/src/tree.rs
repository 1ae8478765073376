//! Regression/classification trees grown on per-sample gradient statistics,
//! with the random-forest classifier and gradient-boosted ensembles built on
//! them.
//!
//! Every sample carries `(g, h, w)`. A node's value is `G/H` and a split
//! maximises `G_L²/H_L + G_R²/H_R`; `w` only counts samples for the minimum
//! leaf size. With `g = y, h = w = 1` this is least squares, with bootstrap
//! counts `g = c·y, h = w = c` it is Gini on class fractions, and with
//! logistic gradients and Hessians it is a Newton boosting step.
//!
//! Feature matrices are column-major: `x[j][i]` is feature `j` of sample `i`.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

const LEAF: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
struct Node {
    feature: u32,
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            let n = &self.nodes[k];
            if n.feature == LEAF {
                return n.value;
            }
            k = if row[n.feature as usize] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    /// Prediction for sample `i` of a column-major matrix.
    pub fn predict_at(&self, x: &[Vec<f64>], i: usize) -> f64 {
        let mut k = 0;
        loop {
            let n = &self.nodes[k];
            if n.feature == LEAF {
                return n.value;
            }
            k = if x[n.feature as usize][i] <= n.threshold { n.left } else { n.right } as usize;
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], k: usize) -> usize {
            let n = &nodes[k];
            if n.feature == LEAF {
                0
            } else {
                1 + walk(nodes, n.left as usize).max(walk(nodes, n.right as usize))
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Per-feature sample orderings, computed once and shared by every tree
/// grown on the same matrix.
#[derive(Clone, Debug)]
pub struct Presorted {
    order: Vec<Vec<u32>>,
}

impl Presorted {
    pub fn new(x: &[Vec<f64>]) -> Self {
        let order = x
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { order }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    /// Minimum total `w` on each side of a split.
    pub min_leaf: f64,
    /// Features drawn per node; `None` considers all.
    pub mtry: Option<usize>,
}

#[derive(Clone, Copy, Default)]
struct Acc {
    g: f64,
    h: f64,
    w: f64,
}

impl Acc {
    fn add(&mut self, g: f64, h: f64, w: f64) {
        self.g += g;
        self.h += h;
        self.w += w;
    }

    fn score(&self) -> f64 {
        if self.h > 0.0 {
            self.g * self.g / self.h
        } else {
            0.0
        }
    }

    fn value(&self) -> f64 {
        if self.h > 0.0 {
            self.g / self.h
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one tree level by level. Samples with `w = 0` are ignored.
pub(crate) fn grow<R: Rng + ?Sized>(x: &[Vec<f64>], sorted: &Presorted, g: &[f64], h: &[f64], w: &[f64], params: GrowParams, rng: &mut R) -> Tree {
    let n = g.len();
    let p = x.len();
    let mut root = Acc::default();
    for i in 0..n {
        if w[i] > 0.0 {
            root.add(g[i], h[i], w[i]);
        }
    }
    let mut nodes = vec![Node {
        feature: LEAF,
        threshold: 0.0,
        left: LEAF,
        right: LEAF,
        value: root.value(),
    }];
    // Slot of each sample's node within the current level, or LEAF once the
    // sample has reached a final leaf.
    let mut slot: Vec<u32> = (0..n).map(|i| if w[i] > 0.0 { 0 } else { LEAF }).collect();
    // (node index, totals) per active slot.
    let mut level: Vec<(usize, Acc)> = vec![(0, root)];
    let mut depth = 0;
    while !level.is_empty() && depth < params.max_depth {
        let m = level.len();
        let candidates: Vec<Vec<bool>> = level
            .iter()
            .map(|_| match params.mtry {
                Some(k) if k < p => {
                    let mut mask = vec![false; p];
                    for j in sample_indices(rng, p, k) {
                        mask[j] = true;
                    }
                    mask
                }
                _ => vec![true; p],
            })
            .collect();
        let mut best: Vec<Option<Split>> = vec![None; m];
        let mut acc = vec![Acc::default(); m];
        let mut last = vec![f64::NAN; m];
        for f in 0..p {
            if !candidates.iter().any(|c| c[f]) {
                continue;
            }
            acc.iter_mut().for_each(|a| *a = Acc::default());
            last.iter_mut().for_each(|v| *v = f64::NAN);
            let col = &x[f];
            for &i in &sorted.order[f] {
                let i = i as usize;
                let s = slot[i];
                if s == LEAF {
                    continue;
                }
                let s = s as usize;
                if !candidates[s][f] {
                    continue;
                }
                let xi = col[i];
                let left = acc[s];
                if xi > last[s] && left.w >= params.min_leaf {
                    let total = level[s].1;
                    let right = Acc {
                        g: total.g - left.g,
                        h: total.h - left.h,
                        w: total.w - left.w,
                    };
                    if right.w >= params.min_leaf && left.h > 0.0 && right.h > 0.0 {
                        let gain = left.score() + right.score() - total.score();
                        if best[s].is_none_or(|b| gain > b.gain) {
                            let mid = 0.5 * (last[s] + xi);
                            let threshold = if mid < xi { mid } else { last[s] };
                            best[s] = Some(Split { gain, feature: f, threshold });
                        }
                    }
                }
                acc[s].add(g[i], h[i], w[i]);
                last[s] = xi;
            }
        }
        // Materialise splits and route samples to the next level.
        let mut next: Vec<(usize, Acc)> = Vec::new();
        let mut child_slots = vec![(LEAF, LEAF); m];
        for (s, b) in best.iter().enumerate() {
            let Some(b) = b else { continue };
            let scale = level[s].1.score().abs().max(1e-300);
            if b.gain <= 1e-12 * scale {
                continue;
            }
            let node = level[s].0;
            let l = nodes.len();
            for _ in 0..2 {
                nodes.push(Node {
                    feature: LEAF,
                    threshold: 0.0,
                    left: LEAF,
                    right: LEAF,
                    value: 0.0,
                });
            }
            nodes[node].feature = b.feature as u32;
            nodes[node].threshold = b.threshold;
            nodes[node].left = l as u32;
            nodes[node].right = l as u32 + 1;
            child_slots[s] = (next.len() as u32, next.len() as u32 + 1);
            next.push((l, Acc::default()));
            next.push((l + 1, Acc::default()));
        }
        for i in 0..n {
            let s = slot[i];
            if s == LEAF {
                continue;
            }
            let (cl, cr) = child_slots[s as usize];
            if cl == LEAF {
                slot[i] = LEAF;
                continue;
            }
            let node = &nodes[level[s as usize].0];
            let c = if x[node.feature as usize][i] <= node.threshold { cl } else { cr };
            slot[i] = c;
            next[c as usize].1.add(g[i], h[i], w[i]);
        }
        for (node, a) in &next {
            nodes[*node].value = a.value();
        }
        level = next;
        depth += 1;
    }
    Tree { nodes }
}

/// Random-forest classifier settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 8,
            folds: 5,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("classifier needs at least one tree".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("classifier max_depth must be positive".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("classifier folds must be at least 2, got {}", self.folds)));
        }
        Ok(())
    }

    /// Features considered at each node: `ceil(sqrt(d))`.
    pub fn feature_subsample(d: usize) -> usize {
        ((d as f64).sqrt().ceil() as usize).clamp(1, d.max(1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomForest {
    trees: Vec<Tree>,
}

impl RandomForest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}

/// Bagged Gini trees with per-node feature subsampling. Tree `k` draws
/// from `stream.derive(&[k])`, so the forest does not depend on scheduling.
pub fn rf_fit(x: &[Vec<f64>], labels: &[bool], cfg: &ClassifierConfig, stream: &RandomStream) -> Result<RandomForest> {
    cfg.validate()?;
    let n = labels.len();
    if x.is_empty() || x.iter().any(|c| c.len() != n) {
        return Err(Error::Dataset("feature columns must be nonempty and match the label count".into()));
    }
    let ones = labels.iter().filter(|&&l| l).count();
    if ones == 0 || ones == n {
        return Err(Error::Dataset("classifier needs both classes".into()));
    }
    let sorted = Presorted::new(x);
    let params = GrowParams {
        max_depth: cfg.max_depth,
        min_leaf: 1.0,
        mtry: Some(ClassifierConfig::feature_subsample(x.len())),
    };
    let trees = crate::par::map_indexed(cfg.n_trees, |k| {
        let mut rng = stream.derive(&[k as u64]).rng();
        let mut count = vec![0.0; n];
        for _ in 0..n {
            count[rng.random_range(0..n)] += 1.0;
        }
        let g: Vec<f64> = count.iter().zip(labels).map(|(c, &l)| if l { *c } else { 0.0 }).collect();
        grow(x, &sorted, &g, &count, &count, params, &mut rng)
    });
    Ok(RandomForest { trees })
}

/// Mean over trees of the class-1 fraction in the leaf each row reaches.
pub fn rf_predict_proba(model: &RandomForest, x: &[Vec<f64>]) -> Vec<f64> {
    let n = x.first().map_or(0, Vec::len);
    let k = model.trees.len() as f64;
    (0..n).map(|i| model.trees.iter().map(|t| t.predict_at(x, i)).sum::<f64>() / k).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Squared,
    Logistic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::Config("gbt max_depth and min_leaf must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("gbt learning_rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gbt {
    loss: Loss,
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl Gbt {
    /// Raw additive score (log-odds under logistic loss).
    pub fn decision_at(&self, x: &[Vec<f64>], i: usize) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict_at(x, i)).sum::<f64>()
    }

    /// Predictions on the response scale: values for squared loss,
    /// probabilities for logistic loss.
    pub fn predict(&self, x: &[Vec<f64>]) -> Vec<f64> {
        let n = x.first().map_or(0, Vec::len);
        (0..n)
            .map(|i| {
                let f = self.decision_at(x, i);
                match self.loss {
                    Loss::Squared => f,
                    Loss::Logistic => crate::dist::expit(f),
                }
            })
            .collect()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// The first `k` stages of this ensemble.
    pub fn truncated(&self, k: usize) -> Gbt {
        Gbt {
            trees: self.trees[..k.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }
}

/// Stagewise boosting with Newton leaf values. `x` may have zero columns,
/// in which case every tree is a single leaf.
pub fn gbt_fit(x: &[Vec<f64>], y: &[f64], cfg: &GbtConfig, loss: Loss) -> Result<Gbt> {
    cfg.validate()?;
    let n = y.len();
    if x.iter().any(|c| c.len() != n) {
        return Err(Error::Dataset("feature columns must match the target length".into()));
    }
    if n < 2 * cfg.min_leaf {
        return Err(Error::Dataset(format!("gbt needs at least {} samples, got {n}", 2 * cfg.min_leaf)));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let base = match loss {
        Loss::Squared => mean,
        Loss::Logistic => {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Dataset("logistic loss needs 0/1 targets".into()));
            }
            crate::dist::logit(mean.clamp(1e-6, 1.0 - 1e-6))
        }
    };
    let sorted = Presorted::new(x);
    let params = GrowParams {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf as f64,
        mtry: None,
    };
    let w = vec![1.0; n];
    let mut f = vec![base; n];
    let mut g = vec![0.0; n];
    let mut h = vec![1.0; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    // Unused: growth is deterministic when every feature is a candidate.
    let mut rng = RandomStream::new(0).rng();
    for _ in 0..cfg.n_trees {
        for i in 0..n {
            match loss {
                Loss::Squared => g[i] = y[i] - f[i],
                Loss::Logistic => {
                    let p = crate::dist::expit(f[i]);
                    g[i] = y[i] - p;
                    h[i] = (p * (1.0 - p)).max(1e-12);
                }
            }
        }
        let tree = grow(x, &sorted, &g, &h, &w, params, &mut rng);
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += cfg.learning_rate * tree.predict_at(x, i);
        }
        trees.push(tree);
    }
    Ok(Gbt {
        loss,
        base,
        learning_rate: cfg.learning_rate,
        trees,
    })
}
