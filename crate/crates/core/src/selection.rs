//! Noise-feature selection and hyperparameter grid search.
//!
//! Both procedures hold out 25% of the training examples with one seeded
//! split, so selection and tuning see the same partition for a given seed.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::roc_auc;
use crate::featurizer::FeatureTable;
use crate::gbm::{train_gbm, GbmModel, GbmParams};
use crate::labeling::{split_indices, LabeledExample};

pub const TRAIN_FRACTION: f64 = 0.75;
pub const DEFAULT_GRID_CAP: usize = 4096;
const NOISE_PREFIX: &str = "__noise_";

/// Feature rows joined with their labels by example id.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: FeatureTable,
    pub labels: Vec<bool>,
    pub answerable: Vec<bool>,
}

impl TrainingSet {
    /// Aligns `labels` to the feature rows. Every feature row needs a label;
    /// labels without a feature row are ignored.
    pub fn join(features: FeatureTable, labels: &[LabeledExample]) -> Result<Self> {
        let by_id: HashMap<&str, &LabeledExample> = labels.iter().map(|l| (l.example_id.as_str(), l)).collect();
        let mut y = Vec::with_capacity(features.len());
        let mut answerable = Vec::with_capacity(features.len());
        for row in &features.rows {
            let l = by_id.get(row.example_id.as_str()).ok_or_else(|| Error::Labeling {
                example_id: row.example_id.clone(),
                message: "feature row has no label".into(),
            })?;
            y.push(l.label);
            answerable.push(l.answerable);
        }
        Ok(TrainingSet {
            features,
            labels: y,
            answerable,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> TrainingSet {
        TrainingSet {
            features: self.features.subset(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            answerable: indices.iter().map(|&i| self.answerable[i]).collect(),
        }
    }

    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<TrainingSet> {
        Ok(TrainingSet {
            features: self.features.select_columns(names)?,
            labels: self.labels.clone(),
            answerable: self.answerable.clone(),
        })
    }

    pub fn train(&self, params: &GbmParams) -> Result<GbmModel> {
        train_gbm(&self.features, &self.labels, params)
    }

    /// The shared seeded 75/25 split used by selection and tuning.
    pub fn holdout_split(&self, seed: u64) -> Result<(TrainingSet, TrainingSet)> {
        let (a, b) = split_indices(self.len(), TRAIN_FRACTION, seed)?;
        Ok((self.subset(&a), self.subset(&b)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub seed: u64,
    pub params: GbmParams,
    /// Relative influence of every real feature and every noise column.
    pub influence: IndexMap<String, f64>,
    pub noise_features: Vec<String>,
    pub noise_threshold: f64,
    pub selected: Vec<String>,
    pub dropped: Vec<String>,
}

impl SelectionReport {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
    }
}

/// Appends one U[0,1) noise column, trains on a 75% split, and keeps the real
/// features whose relative influence exceeds the noise column's.
pub fn select_features(data: &TrainingSet, base_params: &GbmParams, seed: u64) -> Result<SelectionReport> {
    select_features_with_noise(data, base_params, seed, 1)
}

/// Like [`select_features`] with `noise_columns` independent noise columns;
/// the threshold is the largest noise influence.
pub fn select_features_with_noise(
    data: &TrainingSet,
    base_params: &GbmParams,
    seed: u64,
    noise_columns: usize,
) -> Result<SelectionReport> {
    if noise_columns == 0 {
        return Err(Error::Config("at least one noise column is required".into()));
    }
    let positives = data.labels.iter().filter(|&&l| l).count();
    if positives < 2 || data.len() - positives < 2 {
        return Err(Error::Training(
            "feature selection needs at least 2 examples per class".into(),
        ));
    }
    let real = data.features.names.clone();
    let noise_names: Vec<String> = (1..=noise_columns).map(|i| format!("{NOISE_PREFIX}{i}")).collect();
    if let Some(clash) = noise_names.iter().find(|n| real.contains(n)) {
        return Err(Error::Config(format!("feature name `{clash}` is reserved")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut augmented = data.clone();
    augmented.features.names.extend(noise_names.iter().cloned());
    for row in &mut augmented.features.rows {
        row.values.extend((0..noise_columns).map(|_| Some(rng.random::<f64>())));
    }

    let (train, _) = augmented.holdout_split(seed)?;
    let params = base_params.clone().with_seed(seed);
    let model = train.train(&params)?;
    let influence = model.relative_influence();
    let noise_threshold = noise_names
        .iter()
        .map(|n| influence[n.as_str()])
        .fold(f64::NEG_INFINITY, f64::max);

    let (selected, dropped): (Vec<String>, Vec<String>) =
        real.into_iter().partition(|n| influence[n.as_str()] > noise_threshold);
    Ok(SelectionReport {
        seed,
        params,
        influence,
        noise_features: noise_names,
        noise_threshold,
        selected,
        dropped,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Auc,
}

/// Candidate values per hyperparameter. Points are enumerated with
/// `learning_rate` outermost and `bag_fraction` innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub learning_rate: Vec<f64>,
    pub n_trees: Vec<usize>,
    pub interaction_depth: Vec<usize>,
    pub min_obs_in_node: Vec<usize>,
    pub bag_fraction: Vec<f64>,
    #[serde(default)]
    pub objective: Objective,
}

impl GridSpec {
    /// Grid around the SQuAD 2.0-style defaults.
    pub fn sq2_default() -> Self {
        GridSpec {
            learning_rate: vec![0.01, 0.05, 0.1],
            n_trees: vec![100, 207, 468],
            interaction_depth: vec![2, 3, 4],
            min_obs_in_node: vec![50, 100],
            bag_fraction: vec![0.8, 1.0],
            objective: Objective::Auc,
        }
    }

    /// Grid around the Natural Questions-style defaults.
    pub fn nq_default() -> Self {
        GridSpec {
            learning_rate: vec![0.05, 0.1],
            n_trees: vec![100, 207, 468],
            interaction_depth: vec![3, 4],
            min_obs_in_node: vec![100],
            bag_fraction: vec![0.8, 1.0],
            objective: Objective::Auc,
        }
    }

    pub fn size(&self) -> usize {
        self.learning_rate.len()
            * self.n_trees.len()
            * self.interaction_depth.len()
            * self.min_obs_in_node.len()
            * self.bag_fraction.len()
    }

    pub fn validate(&self, cap: usize) -> Result<()> {
        let empty = [
            ("learning_rate", self.learning_rate.is_empty()),
            ("n_trees", self.n_trees.is_empty()),
            ("interaction_depth", self.interaction_depth.is_empty()),
            ("min_obs_in_node", self.min_obs_in_node.is_empty()),
            ("bag_fraction", self.bag_fraction.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("grid list `{name}` is empty")));
        }
        if self.size() > cap {
            return Err(Error::Config(format!("grid has {} points, cap is {cap}", self.size())));
        }
        Ok(())
    }

    pub fn points(&self, seed: u64) -> Vec<GbmParams> {
        let mut out = Vec::with_capacity(self.size());
        for &learning_rate in &self.learning_rate {
            for &n_trees in &self.n_trees {
                for &interaction_depth in &self.interaction_depth {
                    for &min_obs_in_node in &self.min_obs_in_node {
                        for &bag_fraction in &self.bag_fraction {
                            out.push(GbmParams {
                                learning_rate,
                                n_trees,
                                interaction_depth,
                                min_obs_in_node,
                                bag_fraction,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Parses a grid from JSON or TOML text.
    pub fn parse(text: &str) -> Result<Self> {
        match serde_json::from_str(text) {
            Ok(g) => Ok(g),
            Err(json_err) => toml::from_str(text)
                .map_err(|toml_err| Error::Load(format!("grid is neither JSON ({json_err}) nor TOML ({toml_err})"))),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    /// Position in grid enumeration order.
    pub index: usize,
    pub params: GbmParams,
    pub holdout_auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub seed: u64,
    pub params: GbmParams,
    pub holdout_auc: f64,
    /// Every grid point, best first; failed points last.
    pub leaderboard: Vec<GridEntry>,
}

fn rank(a: &GridEntry, b: &GridEntry) -> std::cmp::Ordering {
    match (a.holdout_auc, b.holdout_auc) {
        (Some(x), Some(y)) => y
            .total_cmp(&x)
            .then(a.params.n_trees.cmp(&b.params.n_trees))
            .then(a.params.learning_rate.total_cmp(&b.params.learning_rate))
            .then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    }
}

/// Trains every grid point on the same 75% split and ranks the points by
/// AUC on the held-out 25%. Ties prefer fewer trees, then a lower learning
/// rate, then grid order.
pub fn grid_search(data: &TrainingSet, grid: &GridSpec, seed: u64) -> Result<GridResult> {
    grid_search_capped(data, grid, seed, DEFAULT_GRID_CAP)
}

pub fn grid_search_capped(data: &TrainingSet, grid: &GridSpec, seed: u64, cap: usize) -> Result<GridResult> {
    grid.validate(cap)?;
    let (train, holdout) = data.holdout_split(seed)?;
    let mut leaderboard: Vec<GridEntry> = grid
        .points(seed)
        .into_par_iter()
        .enumerate()
        .map(|(index, params)| {
            let outcome = train
                .train(&params)
                .and_then(|m| roc_auc(&m.predict_table(&holdout.features), &holdout.labels));
            match outcome {
                Ok(auc) => GridEntry {
                    index,
                    params,
                    holdout_auc: Some(auc),
                    error: None,
                },
                Err(e) => GridEntry {
                    index,
                    params,
                    holdout_auc: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    leaderboard.sort_by(rank);
    let best = &leaderboard[0];
    let Some(auc) = best.holdout_auc else {
        return Err(Error::Training(format!(
            "all {} grid points failed; first error: {}",
            leaderboard.len(),
            best.error.as_deref().unwrap_or("unknown")
        )));
    };
    Ok(GridResult {
        seed,
        params: best.params.clone(),
        holdout_auc: auc,
        leaderboard,
    })
}
