//! Gradient boosted machine with Bernoulli (logistic) loss.
//!
//! Each round fits a regression tree to the residuals `y - p` of a row
//! subsample, grown best-first for exactly `interaction_depth` splits, then
//! replaces every leaf's mean with a single Newton step
//! `sum(r) / sum(p (1 - p))`. The ensemble output is a log-odds score:
//!
//! ```text
//! F(x) = init_value + learning_rate * sum_t tree_t(x)
//! ```
//!
//! Splits send `x < threshold` left; missing values follow the direction the
//! node learned during training. Thresholds sit at midpoints between
//! consecutive distinct values. Ties between candidate splits go to the lower
//! feature index, then the lower threshold, so training is a deterministic
//! function of the data and the seed.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::{FeatureTable, FeatureVector};

pub const MODEL_VERSION: u32 = 1;
/// Probability clamp used for the initial log-odds and for deviance.
pub const PROB_EPS: f64 = 1e-6;
/// Lower bound on a leaf's Newton denominator.
pub const HESSIAN_EPS: f64 = 1e-12;
/// Trees deeper than this would exceed the JSON nesting limit of the model file.
pub const MAX_INTERACTION_DEPTH: usize = 32;
const MAX_LOG_ODDS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub learning_rate: f64,
    pub n_trees: usize,
    /// Number of splits per tree.
    pub interaction_depth: usize,
    pub min_obs_in_node: usize,
    /// Fraction of rows drawn without replacement for each tree.
    pub bag_fraction: f64,
    pub seed: u64,
}

impl GbmParams {
    /// Settings selected for SQuAD 2.0-style dumps.
    pub fn sq2() -> Self {
        GbmParams {
            learning_rate: 0.05,
            n_trees: 468,
            interaction_depth: 4,
            min_obs_in_node: 100,
            bag_fraction: 0.8,
            seed: 13,
        }
    }

    /// Settings selected for Natural Questions-style dumps.
    pub fn nq() -> Self {
        GbmParams {
            learning_rate: 0.1,
            n_trees: 207,
            interaction_depth: 3,
            min_obs_in_node: 100,
            bag_fraction: 1.0,
            seed: 13,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.n_trees == 0 || self.interaction_depth == 0 {
            return Err(Error::Config(
                "n_trees and interaction_depth must both be positive".into(),
            ));
        }
        if self.interaction_depth > MAX_INTERACTION_DEPTH {
            return Err(Error::Config(format!(
                "interaction_depth {} exceeds the supported maximum {MAX_INTERACTION_DEPTH}",
                self.interaction_depth
            )));
        }
        if self.min_obs_in_node == 0 {
            return Err(Error::Config("min_obs_in_node must be positive".into()));
        }
        if !(self.bag_fraction > 0.0 && self.bag_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "bag_fraction must lie in (0, 1], got {}",
                self.bag_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature_index: usize,
        threshold: f64,
        missing_goes_left: bool,
        split_improvement: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    /// Output for a row aligned to the model's features; NaN marks missing.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature_index,
                    threshold,
                    missing_goes_left,
                    left,
                    right,
                    ..
                } => {
                    let x = row[*feature_index];
                    let go_left = if x.is_nan() { *missing_goes_left } else { x < *threshold };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    fn visit_splits(&self, f: &mut impl FnMut(usize, f64)) {
        if let TreeNode::Split {
            feature_index,
            split_improvement,
            left,
            right,
            ..
        } = self
        {
            f(*feature_index, *split_improvement);
            left.visit_splits(f);
            right.visit_splits(f);
        }
    }

    fn check(&self, n_features: usize) -> std::result::Result<(), String> {
        match self {
            TreeNode::Leaf { value } => {
                if value.is_finite() {
                    Ok(())
                } else {
                    Err("non-finite leaf value".into())
                }
            }
            TreeNode::Split {
                feature_index,
                threshold,
                split_improvement,
                left,
                right,
                ..
            } => {
                if *feature_index >= n_features {
                    return Err(format!("feature_index {feature_index} out of range"));
                }
                if !threshold.is_finite() {
                    return Err("non-finite threshold".into());
                }
                if split_improvement.is_nan() || *split_improvement < 0.0 {
                    return Err("negative split_improvement".into());
                }
                left.check(n_features)?;
                right.check(n_features)
            }
        }
    }

    pub fn n_splits(&self) -> usize {
        let mut n = 0;
        self.visit_splits(&mut |_, _| n += 1);
        n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub version: u32,
    pub init_value: f64,
    pub learning_rate: f64,
    pub feature_names: Vec<String>,
    pub params: GbmParams,
    pub trees: Vec<TreeNode>,
}

pub fn sigmoid(f: f64) -> f64 {
    1.0 / (1.0 + (-f).exp())
}

impl GbmModel {
    /// Log-odds for a row aligned to `feature_names` (NaN = missing).
    pub fn log_odds_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        (self.init_value + self.learning_rate * sum).clamp(-MAX_LOG_ODDS, MAX_LOG_ODDS)
    }

    pub fn score_row(&self, row: &[f64]) -> f64 {
        sigmoid(self.log_odds_row(row))
    }

    /// Confidence for one feature vector. Features the model does not know
    /// are ignored; model features absent from `x` count as missing.
    pub fn predict_score(&self, x: &FeatureVector) -> f64 {
        let row: Vec<f64> = self
            .feature_names
            .iter()
            .map(|n| x.get(n).unwrap_or(f64::NAN))
            .collect();
        self.score_row(&row)
    }

    /// Scores every row of a table, matching columns by name.
    pub fn predict_table(&self, table: &FeatureTable) -> Vec<f64> {
        let cols: Vec<Option<usize>> = self.feature_names.iter().map(|n| table.column_index(n)).collect();
        let mut row = vec![f64::NAN; cols.len()];
        table
            .rows
            .iter()
            .map(|r| {
                for (slot, c) in row.iter_mut().zip(&cols) {
                    *slot = c.and_then(|j| r.values[j]).unwrap_or(f64::NAN);
                }
                self.score_row(&row)
            })
            .collect()
    }

    /// Per-feature share of the total squared-error reduction, summed over
    /// every split and averaged over trees, scaled to sum to 100.
    pub fn relative_influence(&self) -> IndexMap<String, f64> {
        let mut totals = vec![0.0; self.feature_names.len()];
        for tree in &self.trees {
            tree.visit_splits(&mut |j, imp| totals[j] += imp);
        }
        let n_trees = self.trees.len().max(1) as f64;
        for t in &mut totals {
            *t /= n_trees;
        }
        let sum: f64 = totals.iter().sum();
        if sum > 0.0 {
            for t in &mut totals {
                *t *= 100.0 / sum;
            }
        }
        self.feature_names.iter().cloned().zip(totals).collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("model serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let model: GbmModel = serde_json::from_slice(bytes).map_err(|e| Error::Load(e.to_string()))?;
        model.check().map_err(Error::Load)?;
        Ok(model)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.version != MODEL_VERSION {
            return Err(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                self.version
            ));
        }
        if !self.init_value.is_finite() {
            return Err("non-finite init_value".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if self.learning_rate != self.params.learning_rate {
            return Err("learning_rate disagrees with params".into());
        }
        self.params.validate().map_err(|e| e.to_string())?;
        if self.trees.len() != self.params.n_trees {
            return Err(format!(
                "{} trees stored but params say {}",
                self.trees.len(),
                self.params.n_trees
            ));
        }
        for (i, t) in self.trees.iter().enumerate() {
            t.check(self.feature_names.len())
                .map_err(|e| format!("tree {i}: {e}"))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_json(&bytes).map_err(|e| match e {
            Error::Load(m) => Error::Load(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Mean Bernoulli deviance `-2 [y ln p + (1 - y) ln(1 - p)]` with `p`
/// clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn bernoulli_deviance(labels: &[bool], probs: &[f64]) -> f64 {
    let n = labels.len().max(1) as f64;
    labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y {
                -2.0 * p.ln()
            } else {
                -2.0 * (1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / n
}

pub fn train_gbm(table: &FeatureTable, labels: &[bool], params: &GbmParams) -> Result<GbmModel> {
    train_gbm_traced(table, labels, params).map(|(m, _)| m)
}

/// Trains and also returns the training-set deviance before the first tree
/// and after each round (`n_trees + 1` values).
pub fn train_gbm_traced(table: &FeatureTable, labels: &[bool], params: &GbmParams) -> Result<(GbmModel, Vec<f64>)> {
    params.validate()?;
    let n = table.len();
    if labels.len() != n {
        return Err(Error::Training(format!("{n} feature rows but {} labels", labels.len())));
    }
    if n < 2 * params.min_obs_in_node {
        return Err(Error::Training(format!(
            "{n} rows is fewer than 2 * min_obs_in_node ({})",
            2 * params.min_obs_in_node
        )));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == n {
        return Err(Error::Training("labels contain a single class".into()));
    }
    let data = Columns::from_table(table)?;
    let y: Vec<f64> = labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();

    let mean = (positives as f64 / n as f64).clamp(PROB_EPS, 1.0 - PROB_EPS);
    let init_value = (mean / (1.0 - mean)).ln();
    let mut f = vec![init_value; n];
    let mut probs: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
    let mut trace = vec![bernoulli_deviance(labels, &probs)];

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let bag_size = ((params.bag_fraction * n as f64).round() as usize).clamp(1, n);
    let mut residual = vec![0.0; n];
    let mut hessian = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut row = vec![0.0; data.n_features];

    for _ in 0..params.n_trees {
        let bag: Vec<u32> = if bag_size == n {
            (0..n as u32).collect()
        } else {
            let mut idx: Vec<u32> = rand::seq::index::sample(&mut rng, n, bag_size)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            idx.sort_unstable();
            idx
        };
        for &i in &bag {
            let i = i as usize;
            residual[i] = y[i] - probs[i];
            hessian[i] = probs[i] * (1.0 - probs[i]);
        }
        let tree = grow_tree(&data, &bag, &residual, &hessian, params);
        for i in 0..n {
            data.fill_row(i, &mut row);
            f[i] += params.learning_rate * tree.predict(&row);
            probs[i] = sigmoid(f[i]);
        }
        trace.push(bernoulli_deviance(labels, &probs));
        trees.push(tree);
    }

    let model = GbmModel {
        version: MODEL_VERSION,
        init_value,
        learning_rate: params.learning_rate,
        feature_names: table.names.clone(),
        params: params.clone(),
        trees,
    };
    Ok((model, trace))
}

/// Column-major copy of the training matrix with NaN for missing values and
/// each column's non-missing rows pre-sorted by value.
struct Columns {
    n_rows: usize,
    n_features: usize,
    values: Vec<f64>,
    sorted: Vec<Vec<u32>>,
}

impl Columns {
    fn from_table(table: &FeatureTable) -> Result<Self> {
        let n_rows = table.len();
        let n_features = table.names.len();
        let mut values = vec![f64::NAN; n_rows * n_features];
        for (i, r) in table.rows.iter().enumerate() {
            for (j, v) in r.values.iter().enumerate() {
                if let Some(v) = v {
                    if !v.is_finite() {
                        return Err(Error::Training(format!(
                            "row `{}` feature `{}` is not finite",
                            r.example_id, table.names[j]
                        )));
                    }
                    values[j * n_rows + i] = *v;
                }
            }
        }
        let sorted = (0..n_features)
            .map(|j| {
                let col = &values[j * n_rows..(j + 1) * n_rows];
                let mut idx: Vec<u32> = (0..n_rows as u32).filter(|&i| !col[i as usize].is_nan()).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Ok(Columns {
            n_rows,
            n_features,
            values,
            sorted,
        })
    }

    #[inline]
    fn get(&self, row: u32, feature: usize) -> f64 {
        self.values[feature * self.n_rows + row as usize]
    }

    fn fill_row(&self, row: usize, out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = self.values[j * self.n_rows + row];
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    missing_left: bool,
    improvement: f64,
}

/// Rows of one growing leaf, plus the same rows restricted to non-missing
/// values and sorted by each feature.
struct LeafWork {
    rows: Vec<u32>,
    sorted: Vec<Vec<u32>>,
    best: Option<SplitChoice>,
}

enum Slot {
    Open(LeafWork),
    Split {
        choice: SplitChoice,
        left: usize,
        right: usize,
    },
}

/// Squared-error reduction from separating two groups with the given counts
/// and residual sums: `nl * nr / (nl + nr) * (mean_l - mean_r)^2`.
fn improvement(nl: usize, sl: f64, nr: usize, sr: f64) -> f64 {
    let (nl, nr) = (nl as f64, nr as f64);
    let diff = sl / nl - sr / nr;
    nl * nr / (nl + nr) * diff * diff
}

fn best_split(data: &Columns, work: &LeafWork, residual: &[f64], min_obs: usize) -> Option<SplitChoice> {
    let n = work.rows.len();
    if n < 2 * min_obs {
        return None;
    }
    let mut best: Option<SplitChoice> = None;
    let mut consider = |cand: SplitChoice| {
        if cand.improvement > 0.0 && best.is_none_or(|b| cand.improvement > b.improvement) {
            best = Some(cand);
        }
    };
    for (j, sorted) in work.sorted.iter().enumerate() {
        let n_present = sorted.len();
        if n_present < 2 {
            continue;
        }
        let n_missing = n - n_present;
        let s_missing: f64 = if n_missing == 0 {
            0.0
        } else {
            work.rows
                .iter()
                .filter(|&&i| data.get(i, j).is_nan())
                .map(|&i| residual[i as usize])
                .sum()
        };
        let s_present: f64 = sorted.iter().map(|&i| residual[i as usize]).sum();

        let mut nl = 0usize;
        let mut sl = 0.0;
        for k in 0..n_present - 1 {
            let i = sorted[k];
            nl += 1;
            sl += residual[i as usize];
            let v = data.get(i, j);
            let next = data.get(sorted[k + 1], j);
            if v == next {
                continue;
            }
            let mut threshold = v + (next - v) / 2.0;
            if threshold <= v {
                threshold = next;
            }
            let nr = n_present - nl;
            let sr = s_present - sl;

            if n_missing == 0 {
                if nl >= min_obs && nr >= min_obs {
                    consider(SplitChoice {
                        feature: j,
                        threshold,
                        missing_left: nl >= nr,
                        improvement: improvement(nl, sl, nr, sr),
                    });
                }
                continue;
            }
            let mut local: Option<SplitChoice> = None;
            for missing_left in [true, false] {
                let (a_n, a_s, b_n, b_s) = if missing_left {
                    (nl + n_missing, sl + s_missing, nr, sr)
                } else {
                    (nl, sl, nr + n_missing, sr + s_missing)
                };
                if a_n < min_obs || b_n < min_obs {
                    continue;
                }
                let imp = improvement(a_n, a_s, b_n, b_s);
                if local.is_none_or(|l| imp > l.improvement) {
                    local = Some(SplitChoice {
                        feature: j,
                        threshold,
                        missing_left,
                        improvement: imp,
                    });
                }
            }
            if let Some(c) = local {
                consider(c);
            }
        }
    }
    best
}

fn partition(data: &Columns, work: LeafWork, choice: &SplitChoice) -> (LeafWork, LeafWork) {
    let goes_left = |i: u32| {
        let x = data.get(i, choice.feature);
        if x.is_nan() {
            choice.missing_left
        } else {
            x < choice.threshold
        }
    };
    let (lrows, rrows): (Vec<u32>, Vec<u32>) = work.rows.iter().partition(|&&i| goes_left(i));
    let mut lsorted = Vec::with_capacity(work.sorted.len());
    let mut rsorted = Vec::with_capacity(work.sorted.len());
    for s in work.sorted {
        let (l, r): (Vec<u32>, Vec<u32>) = s.into_iter().partition(|&i| goes_left(i));
        lsorted.push(l);
        rsorted.push(r);
    }
    (
        LeafWork {
            rows: lrows,
            sorted: lsorted,
            best: None,
        },
        LeafWork {
            rows: rrows,
            sorted: rsorted,
            best: None,
        },
    )
}

fn grow_tree(data: &Columns, bag: &[u32], residual: &[f64], hessian: &[f64], params: &GbmParams) -> TreeNode {
    let in_bag = {
        let mut mask = vec![false; data.n_rows];
        for &i in bag {
            mask[i as usize] = true;
        }
        mask
    };
    let mut root = LeafWork {
        rows: bag.to_vec(),
        sorted: data
            .sorted
            .iter()
            .map(|s| s.iter().copied().filter(|&i| in_bag[i as usize]).collect())
            .collect(),
        best: None,
    };
    root.best = best_split(data, &root, residual, params.min_obs_in_node);
    let mut slots = vec![Slot::Open(root)];

    for _ in 0..params.interaction_depth {
        let mut pick: Option<(usize, f64)> = None;
        for (id, slot) in slots.iter().enumerate() {
            if let Slot::Open(LeafWork { best: Some(b), .. }) = slot {
                if pick.is_none_or(|(_, imp)| b.improvement > imp) {
                    pick = Some((id, b.improvement));
                }
            }
        }
        let Some((id, _)) = pick else { break };
        let placeholder = Slot::Split {
            choice: SplitChoice {
                feature: 0,
                threshold: 0.0,
                missing_left: false,
                improvement: 0.0,
            },
            left: 0,
            right: 0,
        };
        let Slot::Open(work) = std::mem::replace(&mut slots[id], placeholder) else {
            unreachable!("picked slot is open")
        };
        let choice = work.best.expect("picked slot has a split");
        let (mut l, mut r) = partition(data, work, &choice);
        l.best = best_split(data, &l, residual, params.min_obs_in_node);
        r.best = best_split(data, &r, residual, params.min_obs_in_node);
        let left = slots.len();
        slots.push(Slot::Open(l));
        slots.push(Slot::Open(r));
        slots[id] = Slot::Split {
            choice,
            left,
            right: left + 1,
        };
    }
    assemble(&slots, 0, residual, hessian)
}

fn assemble(slots: &[Slot], id: usize, residual: &[f64], hessian: &[f64]) -> TreeNode {
    match &slots[id] {
        Slot::Open(work) => {
            let num: f64 = work.rows.iter().map(|&i| residual[i as usize]).sum();
            let den: f64 = work.rows.iter().map(|&i| hessian[i as usize]).sum();
            TreeNode::Leaf {
                value: num / den.max(HESSIAN_EPS),
            }
        }
        Slot::Split { choice, left, right } => TreeNode::Split {
            feature_index: choice.feature,
            threshold: choice.threshold,
            missing_goes_left: choice.missing_left,
            split_improvement: choice.improvement,
            left: Box::new(assemble(slots, *left, residual, hessian)),
            right: Box::new(assemble(slots, *right, residual, hessian)),
        },
    }
}
