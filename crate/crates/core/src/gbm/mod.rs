//! Second-order gradient-boosted regression trees for squared error.
//!
//! Each round fits a tree to the gradients `g = ŷ − y` and hessians `h = 1`
//! of the current predictions. Splits are chosen by exact enumeration of
//! midpoints between consecutive distinct values, maximising
//!
//! ```text
//! gain = ½ [ G_L²/(H_L+λ) + G_R²/(H_R+λ) − (G_L+G_R)²/(H_L+H_R+λ) ] − γ
//! ```
//!
//! and leaves take the Newton weight `−G/(H+λ)`. The model predicts
//! `base_score + η · Σ tree_k(x)`, accumulated tree by tree.

mod train;
mod tree;

pub use train::{train, RoundMetrics, TrainOutcome};
pub use tree::{Node, Tree};

use crate::numeric::CompensatedSum;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GbmError {
    #[error("need at least 10 rows to split, got {0}")]
    TooFewRows(usize),
    #[error("split fraction {0} must leave both parts non-empty")]
    InvalidFraction(f64),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("feature {feature} of row {row} is not finite")]
    NonFiniteFeature { row: usize, feature: String },
    #[error("target of row {0} is not finite")]
    NonFiniteTarget(usize),
    #[error("missing feature {0}")]
    MissingFeature(String),
    #[error("row has {found} features, model expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("no rows to evaluate")]
    EmptyInput,
    #[error("malformed model document: {0}")]
    BadModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rounds_max: usize,
    pub max_depth: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum gain for a split to be kept.
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Rounds without validation-RMSE improvement before stopping.
    pub early_stopping_patience: usize,
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            rounds_max: 1000,
            max_depth: 6,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            early_stopping_patience: 25,
            split_fraction: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const ROUNDS_RANGE: std::ops::RangeInclusive<usize> = 10..=1000;

    pub fn validate(&self) -> Result<(), GbmError> {
        let bad = |msg: String| Err(GbmError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} not in (0, 1]", self.learning_rate));
        }
        if !Self::ROUNDS_RANGE.contains(&self.rounds_max) {
            return bad(format!("rounds_max {} not in [10, 1000]", self.rounds_max));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be >= 0", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be >= 0", self.gamma));
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad(format!("min_child_weight {} must be >= 0", self.min_child_weight));
        }
        if self.early_stopping_patience == 0 {
            return bad("early_stopping_patience must be at least 1".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction {} not in (0, 1)", self.split_fraction));
        }
        Ok(())
    }
}

/// Row-major feature matrix with targets and row keys.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    feature_names: Vec<String>,
    values: Vec<f64>,
    targets: Vec<f64>,
    keys: Vec<String>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>) -> Self {
        Self {
            feature_names,
            ..Default::default()
        }
    }

    pub fn push(&mut self, key: impl Into<String>, row: &[f64], target: f64) {
        assert_eq!(row.len(), self.feature_names.len(), "row width");
        self.values.extend_from_slice(row);
        self.targets.push(target);
        self.keys.push(key.into());
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let f = self.n_features();
        &self.values[i * f..(i + 1) * f]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn key(&self, i: usize) -> &str {
        &self.keys[i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_features().max(1)).take(self.len())
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.feature_names.clone());
        for &i in indices {
            out.push(self.keys[i].clone(), self.row(i), self.targets[i]);
        }
        out
    }
}

/// Seeded uniform partition into `(train, test)` with `round(n·fraction)`
/// training rows. Both parts keep the input row order.
pub fn split_data(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset), GbmError> {
    split_data_stream(data, fraction, seed, "split")
}

/// [`split_data`] drawing from a named random sub-stream.
pub fn split_data_stream(
    data: &Dataset,
    fraction: f64,
    seed: u64,
    stream: &str,
) -> Result<(Dataset, Dataset), GbmError> {
    let n = data.len();
    if n < 10 {
        return Err(GbmError::TooFewRows(n));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(GbmError::InvalidFraction(fraction));
    }
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(GbmError::InvalidFraction(fraction));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::substream(seed, stream));
    let (train, test) = order.split_at_mut(n_train);
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(train), data.subset(test)))
}

/// Trained additive tree model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

impl Ensemble {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn check_row(&self, row: &[f64]) -> Result<(), GbmError> {
        if row.len() > self.n_features() {
            return Err(GbmError::ShapeMismatch {
                expected: self.n_features(),
                found: row.len(),
            });
        }
        if row.len() < self.n_features() {
            return Err(GbmError::MissingFeature(self.feature_names[row.len()].clone()));
        }
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(GbmError::MissingFeature(self.feature_names[i].clone()));
        }
        Ok(())
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64, GbmError> {
        self.check_row(row)?;
        Ok(self.predict_unchecked(row))
    }

    /// `base_score` plus `η · tree(row)` accumulated in tree order.
    pub fn predict_unchecked(&self, row: &[f64]) -> f64 {
        let mut p = self.base_score;
        for t in &self.trees {
            p += self.learning_rate * t.eval(row);
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
}

pub(crate) fn metrics(predictions: &[f64], targets: &[f64]) -> Metrics {
    let mut abs = CompensatedSum::new();
    let mut sq = CompensatedSum::new();
    for (p, y) in predictions.iter().zip(targets) {
        let r = p - y;
        abs.add(r.abs());
        sq.add(r * r);
    }
    let n = targets.len();
    Metrics {
        n,
        mae: abs.total() / n as f64,
        rmse: (sq.total() / n as f64).sqrt(),
    }
}

pub fn evaluate(ensemble: &Ensemble, data: &Dataset) -> Result<Metrics, GbmError> {
    if data.is_empty() {
        return Err(GbmError::EmptyInput);
    }
    let preds = data
        .rows()
        .map(|r| ensemble.predict(r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(metrics(&preds, data.targets()))
}

pub const MODEL_FORMAT: &str = "tract-noise/boosted-trees";
pub const MODEL_VERSION: u32 = 1;

/// Self-describing JSON model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub feature_names: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub best_round: usize,
    pub trees: Vec<Tree>,
    pub history: Vec<RoundMetrics>,
}

impl ModelDocument {
    pub fn new(config: &TrainConfig, outcome: &TrainOutcome) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: config.clone(),
            feature_names: outcome.ensemble.feature_names.clone(),
            base_score: outcome.ensemble.base_score,
            learning_rate: outcome.ensemble.learning_rate,
            best_round: outcome.best_round,
            trees: outcome.ensemble.trees.clone(),
            history: outcome.history.clone(),
        }
    }

    pub fn ensemble(&self) -> Ensemble {
        Ensemble {
            feature_names: self.feature_names.clone(),
            base_score: self.base_score,
            learning_rate: self.learning_rate,
            trees: self.trees.clone(),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("model serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, GbmError> {
        let doc: ModelDocument =
            serde_json::from_slice(bytes).map_err(|e| GbmError::BadModel(e.to_string()))?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(GbmError::BadModel(format!(
                "unsupported format {} v{}",
                doc.format, doc.version
            )));
        }
        for (k, t) in doc.trees.iter().enumerate() {
            t.check(doc.feature_names.len())
                .map_err(|e| GbmError::BadModel(format!("tree {k}: {e}")))?;
        }
        Ok(doc)
    }
}
