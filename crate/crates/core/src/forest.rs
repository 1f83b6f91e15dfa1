//! Bagged Gini decision trees with class weighting, hyperparameter tuning
//! under a generalization-gap rule, and impurity-based feature importance.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "morpholcz-forest/1";

/// Dense row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub n: usize,
    pub d: usize,
    pub x: Vec<f64>,
    pub y: Vec<u8>,
}

impl Dataset {
    pub fn new(n: usize, d: usize, x: Vec<f64>, y: Vec<u8>) -> Result<Self> {
        if x.len() != n * d || y.len() != n {
            return Err(Error::Data(format!("dataset shape mismatch: {} values, {} labels for {n}×{d}", x.len(), y.len())));
        }
        Ok(Dataset { n, d, x, y })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.x[row * self.d + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.x[row * self.d..(row + 1) * self.d]
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(rows.len() * self.d);
        for &r in rows {
            x.extend_from_slice(self.row(r));
        }
        Dataset { n: rows.len(), d: self.d, x, y: rows.iter().map(|&r| self.y[r]).collect() }
    }
}

/// Per-feature medians of the training rows, used to fill missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub medians: Vec<f64>,
}

impl Imputer {
    pub fn fit(data: &Dataset, rows: &[usize]) -> Imputer {
        let medians = (0..data.d)
            .map(|c| {
                let mut v: Vec<f64> = rows.iter().map(|&r| data.get(r, c)).filter(|v| !v.is_nan()).collect();
                if v.is_empty() {
                    return 0.0;
                }
                v.sort_by(f64::total_cmp);
                let m = v.len();
                if m % 2 == 1 {
                    v[m / 2]
                } else {
                    0.5 * (v[m / 2 - 1] + v[m / 2])
                }
            })
            .collect();
        Imputer { medians }
    }

    pub fn apply(&self, data: &mut Dataset) {
        for r in 0..data.n {
            for c in 0..data.d {
                let v = &mut data.x[r * data.d + c];
                if v.is_nan() {
                    *v = self.medians[c];
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    InverseFrequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
    Fraction(f64),
    Count(usize),
    All,
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::Log2 => (d as f64).log2().floor() as usize,
            MaxFeatures::Fraction(f) => (f * d as f64).floor() as usize,
            MaxFeatures::Count(k) => k,
            MaxFeatures::All => d,
        };
        k.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub weighting: Weighting,
    pub seed: u64,
    /// Draw a bootstrap sample per tree; off fits every tree on all rows.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
            weighting: Weighting::Uniform,
            seed: 0,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { distribution: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Weighted impurity decrease accumulated per feature.
    pub importance: Vec<f64>,
}

impl Tree {
    pub fn leaf_distribution(&self, row: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { distribution } => return distribution,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    pub config: ForestConfig,
    /// Class labels in the order of the leaf distributions.
    pub classes: Vec<u8>,
    pub class_weights: Vec<f64>,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub imputer: Option<Imputer>,
    pub trees: Vec<Tree>,
}

/// Gini impurity of weighted class totals.
pub fn gini(counts: &[f64]) -> f64 {
    let w: f64 = counts.iter().sum();
    if w <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / w) * (c / w)).sum::<f64>()
}

/// Minimum gain improvement for a candidate split to replace the current best.
pub const SPLIT_EPS: f64 = 1e-12;

struct Builder<'a> {
    data: &'a Dataset,
    /// Class index per row.
    yk: &'a [usize],
    k: usize,
    class_weights: &'a [f64],
    max_depth: usize,
    n_candidates: usize,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

/// Best split of the given rows: (gain, feature, threshold).
pub fn best_split(
    data: &Dataset,
    yk: &[usize],
    k: usize,
    class_weights: &[f64],
    rows: &[(usize, f64)],
    features: &[usize],
) -> Option<(f64, usize, f64)> {
    let mut total = vec![0.0; k];
    for &(r, m) in rows {
        total[yk[r]] += m * class_weights[yk[r]];
    }
    let w_total: f64 = total.iter().sum();
    let parent = w_total * gini(&total);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<(f64, usize, f64)> = Vec::with_capacity(rows.len());
    let mut left = vec![0.0; k];
    for &f in features {
        order.clear();
        order.extend(rows.iter().map(|&(r, m)| (data.get(r, f), r, m)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        left.iter_mut().for_each(|v| *v = 0.0);
        let mut w_left = 0.0;
        for i in 0..order.len() - 1 {
            let (v, r, m) = order[i];
            let w = m * class_weights[yk[r]];
            left[yk[r]] += w;
            w_left += w;
            let next = order[i + 1].0;
            if next <= v {
                continue;
            }
            let w_right = w_total - w_left;
            let mut sq_l = 0.0;
            let mut sq_r = 0.0;
            for c in 0..k {
                sq_l += left[c] * left[c];
                let rc = total[c] - left[c];
                sq_r += rc * rc;
            }
            let imp_l = if w_left > 0.0 { w_left - sq_l / w_left } else { 0.0 };
            let imp_r = if w_right > 0.0 { w_right - sq_r / w_right } else { 0.0 };
            let gain = parent - imp_l - imp_r;
            if best.is_none_or(|b| gain > b.0 + SPLIT_EPS) {
                best = Some((gain, f, 0.5 * (v + next)));
            }
        }
    }
    best
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[(usize, f64)]) -> usize {
        let mut dist = vec![0.0; self.k];
        for &(r, m) in rows {
            dist[self.yk[r]] += m * self.class_weights[self.yk[r]];
        }
        let s: f64 = dist.iter().sum();
        if s > 0.0 {
            dist.iter_mut().for_each(|v| *v /= s);
        }
        self.nodes.push(Node::Leaf { distribution: dist });
        self.nodes.len() - 1
    }

    fn grow(&mut self, rows: Vec<(usize, f64)>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let first = self.yk[rows[0].0];
        let pure = rows.iter().all(|&(r, _)| self.yk[r] == first);
        if pure || depth >= self.max_depth || rows.len() < 2 {
            return self.leaf(&rows);
        }
        let d = self.data.d;
        let mut feats: Vec<usize> = if self.n_candidates >= d {
            (0..d).collect()
        } else {
            sample(rng, d, self.n_candidates).into_vec()
        };
        feats.sort_unstable();
        let Some((gain, feature, threshold)) = best_split(self.data, self.yk, self.k, self.class_weights, &rows, &feats) else {
            return self.leaf(&rows);
        };
        if gain <= SPLIT_EPS {
            return self.leaf(&rows);
        }
        self.importance[feature] += gain;
        let (l, r): (Vec<_>, Vec<_>) = rows.into_iter().partition(|&(row, _)| self.data.get(row, feature) <= threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { distribution: vec![] });
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split { feature, threshold, left, right };
        id
    }
}

/// Class weights for the training labels (`classes` sorted ascending).
pub fn class_weights(y: &[u8], classes: &[u8], weighting: Weighting) -> Vec<f64> {
    match weighting {
        Weighting::Uniform => vec![1.0; classes.len()],
        Weighting::InverseFrequency => {
            let n = y.len() as f64;
            let k = classes.len() as f64;
            classes
                .iter()
                .map(|c| {
                    let nc = y.iter().filter(|v| *v == c).count() as f64;
                    if nc > 0.0 {
                        n / (k * nc)
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    }
}

impl ForestModel {
    /// Fits a forest on `data` (missing values must already be imputed).
    pub fn fit(data: &Dataset, cfg: &ForestConfig) -> Result<ForestModel> {
        let mut classes: Vec<u8> = data.y.clone();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::Data("training data must span at least two classes".into()));
        }
        if cfg.n_trees == 0 {
            return Err(Error::Config("n_trees must be positive".into()));
        }
        if data.x.iter().any(|v| v.is_nan()) {
            return Err(Error::Data("training features contain missing values; impute first".into()));
        }
        let cw = class_weights(&data.y, &classes, cfg.weighting);
        let yk: Vec<usize> = data.y.iter().map(|c| classes.binary_search(c).expect("known class")).collect();
        let n_candidates = cfg.max_features.resolve(data.d);
        let trees: Vec<Tree> = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let rows: Vec<(usize, f64)> = if cfg.bootstrap {
                    let mut counts = vec![0u32; data.n];
                    for _ in 0..data.n {
                        counts[rng.random_range(0..data.n)] += 1;
                    }
                    counts.iter().enumerate().filter(|(_, c)| **c > 0).map(|(r, c)| (r, *c as f64)).collect()
                } else {
                    (0..data.n).map(|r| (r, 1.0)).collect()
                };
                let mut b = Builder {
                    data,
                    yk: &yk,
                    k: classes.len(),
                    class_weights: &cw,
                    max_depth: cfg.max_depth.unwrap_or(usize::MAX),
                    n_candidates,
                    nodes: Vec::new(),
                    importance: vec![0.0; data.d],
                };
                b.grow(rows, 0, &mut rng);
                Tree { nodes: b.nodes, importance: b.importance }
            })
            .collect();
        Ok(ForestModel {
            format: MODEL_FORMAT.into(),
            config: cfg.clone(),
            classes,
            class_weights: cw,
            n_features: data.d,
            feature_names: Vec::new(),
            imputer: None,
            trees,
        })
    }

    pub fn predict_proba(&self, row: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.classes.len()];
        for t in &self.trees {
            for (a, p) in acc.iter_mut().zip(t.leaf_distribution(row)) {
                *a += p;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|v| *v /= n);
        acc
    }

    /// Class with the highest mean probability; ties go to the lowest class.
    pub fn predict_row(&self, row: &[f64]) -> u8 {
        let p = self.predict_proba(row);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        self.classes[best]
    }

    /// Predicts every row, imputing missing values with the stored medians.
    pub fn predict(&self, data: &Dataset) -> Vec<u8> {
        (0..data.n)
            .into_par_iter()
            .map(|r| {
                let row = data.row(r);
                if let Some(imp) = &self.imputer {
                    let filled: Vec<f64> = row.iter().zip(&imp.medians).map(|(v, m)| if v.is_nan() { *m } else { *v }).collect();
                    self.predict_row(&filled)
                } else {
                    self.predict_row(row)
                }
            })
            .collect()
    }

    /// Mean decrease in weighted Gini impurity per feature: normalized per
    /// tree, averaged over trees, normalized to sum to one.
    pub fn importances(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_features];
        for t in &self.trees {
            let s: f64 = t.importance.iter().sum();
            if s > 0.0 {
                for (a, v) in acc.iter_mut().zip(&t.importance) {
                    *a += v / s;
                }
            }
        }
        let s: f64 = acc.iter().sum();
        if s > 0.0 {
            acc.iter_mut().for_each(|v| *v /= s);
        }
        acc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<ForestModel> {
        let m: ForestModel = serde_json::from_str(s).map_err(|e| Error::Data(format!("bad model file: {e}")))?;
        if m.format != MODEL_FORMAT {
            return Err(Error::Data(format!("unsupported model format `{}`", m.format)));
        }
        Ok(m)
    }
}

/// Features ranked by importance (descending, ties by index).
pub fn ranked_importance(importances: &[f64]) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = importances.iter().copied().enumerate().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}

/// The first `k` features of the ranking; all of them when fewer exist.
pub fn top_k(ranked: &[(usize, f64)], k: usize) -> Vec<usize> {
    if ranked.len() < k {
        log::warn!("requested top {k} features but only {} exist", ranked.len());
    }
    ranked.iter().take(k).map(|r| r.0).collect()
}

pub fn accuracy(y_true: &[u8], y_pred: &[u8]) -> f64 {
    if y_true.is_empty() {
        return f64::NAN;
    }
    y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count() as f64 / y_true.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub n_features: usize,
    pub train_oa: f64,
    pub test_oa: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    GapBelowLimit,
    MinimumGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub weighting: Weighting,
    pub max_gap: f64,
    pub grid: Vec<GridPoint>,
    pub chosen: usize,
    pub rule: SelectionRule,
}

fn depth_key(d: Option<usize>) -> usize {
    d.unwrap_or(usize::MAX)
}

/// Selection rule: the highest test accuracy among points whose gap is below
/// `max_gap`; otherwise the smallest gap. Ties go to the smaller depth, then
/// to fewer features.
pub fn select(grid: &[GridPoint], max_gap: f64) -> Option<(usize, SelectionRule)> {
    let tie = |a: &GridPoint, b: &GridPoint| depth_key(a.max_depth).cmp(&depth_key(b.max_depth)).then(a.n_features.cmp(&b.n_features));
    let ok: Vec<usize> = (0..grid.len()).filter(|&i| grid[i].gap < max_gap).collect();
    if !ok.is_empty() {
        let best = ok
            .into_iter()
            .min_by(|&a, &b| grid[b].test_oa.total_cmp(&grid[a].test_oa).then(tie(&grid[a], &grid[b])))?;
        return Some((best, SelectionRule::GapBelowLimit));
    }
    let best = (0..grid.len()).min_by(|&a, &b| grid[a].gap.total_cmp(&grid[b].gap).then(tie(&grid[a], &grid[b])))?;
    Some((best, SelectionRule::MinimumGap))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub depths: Vec<Option<usize>>,
    pub features: Vec<MaxFeatures>,
    pub max_gap: f64,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            depths: vec![Some(4), Some(6), Some(8), Some(10), Some(12), Some(16), Some(20), None],
            features: vec![MaxFeatures::Sqrt, MaxFeatures::Log2, MaxFeatures::Fraction(0.1), MaxFeatures::Fraction(0.3)],
            max_gap: 0.05,
        }
    }
}

/// Trains one model per grid point on `train` and selects by the gap rule
/// using `test`. Missing values are imputed with training medians.
pub fn tune(
    data: &Dataset,
    train_rows: &[usize],
    test_rows: &[usize],
    base: &ForestConfig,
    grid: &TuningGrid,
) -> Result<(ForestModel, TuningReport)> {
    if grid.depths.is_empty() || grid.features.is_empty() {
        return Err(Error::Config("tuning grid must not be empty".into()));
    }
    let imputer = Imputer::fit(data, train_rows);
    let mut train = data.subset(train_rows);
    imputer.apply(&mut train);
    let mut test = data.subset(test_rows);
    imputer.apply(&mut test);
    let mut points = Vec::new();
    let mut models = Vec::new();
    for &depth in &grid.depths {
        for &mf in &grid.features {
            let cfg = ForestConfig { max_depth: depth, max_features: mf, ..base.clone() };
            let mut m = ForestModel::fit(&train, &cfg)?;
            m.imputer = Some(imputer.clone());
            let train_oa = accuracy(&train.y, &m.predict(&train));
            let test_oa = accuracy(&test.y, &m.predict(&test));
            points.push(GridPoint {
                max_depth: depth,
                max_features: mf,
                n_features: mf.resolve(data.d),
                train_oa,
                test_oa,
                gap: train_oa - test_oa,
            });
            models.push(m);
        }
    }
    let (chosen, rule) = select(&points, grid.max_gap).expect("non-empty grid");
    let model = models.swap_remove(chosen);
    Ok((model, TuningReport { weighting: base.weighting, max_gap: grid.max_gap, grid: points, chosen, rule }))
}
