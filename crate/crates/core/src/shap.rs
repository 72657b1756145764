//! Exact Shapley attributions for [`Ensemble`] predictions.
//!
//! The value of a coalition `S` is the path-dependent expectation of the
//! model: at a split on a feature in `S` follow the row's branch, otherwise
//! average both branches by their training cover. [`shapley_fast`] is the
//! polynomial-time tree algorithm; [`shapley_bruteforce`] evaluates the
//! Shapley formula over all `2^M` coalitions and serves as its oracle.

use crate::gbm::{Dataset, Ensemble, GbmError, Node, Tree};
use crate::numeric::CompensatedSum;
use crate::output::{Cell, Table};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest feature count [`shapley_bruteforce`] accepts.
pub const BRUTEFORCE_MAX_FEATURES: usize = 15;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ShapError {
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("{0} features exceed the brute-force limit of 15")]
    TooManyFeatures(usize),
    #[error("no attributions")]
    EmptyInput,
    #[error(transparent)]
    Model(#[from] GbmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub key: String,
    /// Coalition value of the empty set.
    pub phi0: f64,
    pub phis: Vec<f64>,
}

impl Attribution {
    /// `phi0 + Σ φ`, which equals the model prediction.
    pub fn total(&self) -> f64 {
        let mut s: CompensatedSum = self.phis.iter().copied().collect();
        s.add(self.phi0);
        s.total()
    }
}

fn tree_value(tree: &Tree, node: usize, row: &[f64], in_s: &[bool]) -> f64 {
    match &tree.nodes[node] {
        Node::Leaf { weight, .. } => *weight,
        Node::Split {
            feature,
            split_value,
            left,
            right,
            cover_left,
            cover_right,
            ..
        } => {
            if in_s[*feature] {
                let next = if row[*feature] < *split_value {
                    *left
                } else {
                    *right
                };
                tree_value(tree, next, row, in_s)
            } else {
                cover_left * tree_value(tree, *left, row, in_s)
                    + cover_right * tree_value(tree, *right, row, in_s)
            }
        }
    }
}

fn value_of_mask(ensemble: &Ensemble, row: &[f64], in_s: &[bool]) -> f64 {
    let mut p = ensemble.base_score;
    for t in &ensemble.trees {
        p += ensemble.learning_rate * tree_value(t, 0, row, in_s);
    }
    p
}

/// Path-dependent expected output given the features in `subset`.
pub fn coalition_value(ensemble: &Ensemble, row: &[f64], subset: &[usize]) -> Result<f64, ShapError> {
    ensemble.check_row(row)?;
    let mut in_s = vec![false; ensemble.n_features()];
    for &f in subset {
        *in_s
            .get_mut(f)
            .ok_or_else(|| ShapError::UnknownFeature(format!("#{f}")))? = true;
    }
    Ok(value_of_mask(ensemble, row, &in_s))
}

/// Shapley values by enumerating every coalition.
pub fn shapley_bruteforce(ensemble: &Ensemble, row: &[f64], key: &str) -> Result<Attribution, ShapError> {
    let m = ensemble.n_features();
    if m > BRUTEFORCE_MAX_FEATURES {
        return Err(ShapError::TooManyFeatures(m));
    }
    ensemble.check_row(row)?;
    let values: Vec<f64> = (0..1usize << m)
        .map(|mask| {
            let in_s: Vec<bool> = (0..m).map(|i| mask >> i & 1 == 1).collect();
            value_of_mask(ensemble, row, &in_s)
        })
        .collect();
    let fact: Vec<f64> = (0..=m)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    let phis = (0..m)
        .map(|i| {
            let bit = 1usize << i;
            let mut s = CompensatedSum::new();
            for mask in (0..1usize << m).filter(|mask| mask & bit == 0) {
                let size = mask.count_ones() as usize;
                let w = fact[size] * fact[m - size - 1] / fact[m];
                s.add(w * (values[mask | bit] - values[mask]));
            }
            s.total()
        })
        .collect();
    Ok(Attribution {
        key: key.to_string(),
        phi0: values[0],
        phis,
    })
}

#[derive(Debug, Clone, Copy, Default)]
struct PathElem {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    weight: f64,
}

fn extend(
    path: &mut [PathElem],
    depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    path[depth] = PathElem {
        feature,
        zero_fraction,
        one_fraction,
        weight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].weight += one_fraction * path[i].weight * (i + 1) as f64 / d1;
        path[i].weight = zero_fraction * path[i].weight * (depth - i) as f64 / d1;
    }
}

fn unwind(path: &mut [PathElem], depth: usize, index: usize) {
    let PathElem {
        one_fraction: one,
        zero_fraction: zero,
        ..
    } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].weight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].weight;
            path[i].weight = next_one * d1 / ((i + 1) as f64 * one);
            next_one = tmp - path[i].weight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].weight = path[i].weight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_sum(path: &[PathElem], depth: usize, index: usize) -> f64 {
    let PathElem {
        one_fraction: one,
        zero_fraction: zero,
        ..
    } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].weight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].weight - tmp * zero * (depth - i) as f64 / d1;
        } else if zero != 0.0 {
            total += path[i].weight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

struct Walk<'a> {
    tree: &'a Tree,
    row: &'a [f64],
    phis: &'a mut [f64],
    scale: f64,
}

impl Walk<'_> {
    /// `path` holds the inherited path in its first `depth` slots; deeper
    /// levels use the space after it.
    fn recurse(
        &mut self,
        node: usize,
        path: &mut [PathElem],
        mut depth: usize,
        zero_fraction: f64,
        one_fraction: f64,
        feature: Option<usize>,
    ) {
        extend(path, depth, zero_fraction, one_fraction, feature);
        match self.tree.nodes[node] {
            Node::Leaf { weight, .. } => {
                for i in 1..=depth {
                    let w = unwound_sum(path, depth, i);
                    let e = path[i];
                    let f = e.feature.expect("non-root path element");
                    self.phis[f] += w * (e.one_fraction - e.zero_fraction) * weight * self.scale;
                }
            }
            Node::Split {
                feature: split_feature,
                split_value,
                left,
                right,
                cover_left,
                cover_right,
                ..
            } => {
                let (hot, cold, hot_cover, cold_cover) = if self.row[split_feature] < split_value {
                    (left, right, cover_left, cover_right)
                } else {
                    (right, left, cover_right, cover_left)
                };
                let (mut inc_zero, mut inc_one) = (1.0, 1.0);
                if let Some(k) = (1..=depth).find(|&k| path[k].feature == Some(split_feature)) {
                    inc_zero = path[k].zero_fraction;
                    inc_one = path[k].one_fraction;
                    unwind(path, depth, k);
                    depth -= 1;
                }
                let (mine, rest) = path.split_at_mut(depth + 1);
                rest[..depth + 1].copy_from_slice(mine);
                self.recurse(
                    hot,
                    rest,
                    depth + 1,
                    hot_cover * inc_zero,
                    inc_one,
                    Some(split_feature),
                );
                rest[..depth + 1].copy_from_slice(mine);
                self.recurse(
                    cold,
                    rest,
                    depth + 1,
                    cold_cover * inc_zero,
                    0.0,
                    Some(split_feature),
                );
            }
        }
    }
}

/// Polynomial-time Shapley values, exact for the path-dependent value
/// function.
pub fn shapley_fast(ensemble: &Ensemble, row: &[f64], key: &str) -> Result<Attribution, ShapError> {
    ensemble.check_row(row)?;
    let mut phis = vec![0.0; ensemble.n_features()];
    let mut phi0 = ensemble.base_score;
    let mut buf = Vec::new();
    for tree in &ensemble.trees {
        phi0 += ensemble.learning_rate * tree.expected_value();
        let d = tree.depth() + 2;
        buf.clear();
        buf.resize(d * (d + 1) / 2 + d, PathElem::default());
        Walk {
            tree,
            row,
            phis: &mut phis,
            scale: ensemble.learning_rate,
        }
        .recurse(0, &mut buf, 0, 1.0, 1.0, None);
    }
    Ok(Attribution {
        key: key.to_string(),
        phi0,
        phis,
    })
}

/// [`shapley_fast`] for every row, in row order.
pub fn attribute(ensemble: &Ensemble, data: &Dataset) -> Result<Vec<Attribution>, ShapError> {
    (0..data.len())
        .into_par_iter()
        .map(|i| shapley_fast(ensemble, data.row(i), data.key(i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
}

/// Features by descending mean |φ|, ties in feature order.
pub fn summary(
    attributions: &[Attribution],
    feature_names: &[String],
) -> Result<Vec<FeatureImportance>, ShapError> {
    if attributions.is_empty() {
        return Err(ShapError::EmptyInput);
    }
    let n = attributions.len() as f64;
    let mut out: Vec<(usize, f64)> = (0..feature_names.len())
        .map(|f| {
            let s: CompensatedSum = attributions.iter().map(|a| a.phis[f].abs()).collect();
            (f, s.total() / n)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out
        .into_iter()
        .map(|(f, m)| FeatureImportance {
            feature: feature_names[f].clone(),
            mean_abs_phi: m,
        })
        .collect())
}

/// `(feature value, φ)` per row, sorted by value then row order.
pub fn dependence(
    attributions: &[Attribution],
    data: &Dataset,
    feature: &str,
) -> Result<Vec<(f64, f64)>, ShapError> {
    let f = data
        .feature_names()
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| ShapError::UnknownFeature(feature.to_string()))?;
    let mut pairs: Vec<(f64, f64)> = attributions
        .iter()
        .enumerate()
        .map(|(i, a)| (data.row(i)[f], a.phis[f]))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}

/// First feature value where the mean φ per distinct value changes sign,
/// taken as the midpoint between the two values. Values whose mean φ is
/// exactly zero are skipped.
pub fn sign_change(pairs: &[(f64, f64)]) -> Option<f64> {
    let mut means: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        let mut s = CompensatedSum::new();
        let mut n = 0;
        while i < pairs.len() && pairs[i].0 == v {
            s.add(pairs[i].1);
            n += 1;
            i += 1;
        }
        let m = s.total() / n as f64;
        if m != 0.0 {
            means.push((v, m));
        }
    }
    means
        .windows(2)
        .find(|w| w[0].1.signum() != w[1].1.signum())
        .map(|w| (w[0].0 + w[1].0) / 2.0)
}

pub fn values_table(attributions: &[Attribution], feature_names: &[String]) -> Table {
    let mut header = vec!["key".to_string()];
    header.extend(feature_names.iter().cloned());
    header.push("phi0".into());
    let mut t = Table::new(header);
    for a in attributions {
        let mut row = vec![Cell::text(&a.key)];
        row.extend(a.phis.iter().map(|p| Cell::Num(*p)));
        row.push(Cell::Num(a.phi0));
        t.push(row);
    }
    t
}

pub fn summary_table(ranking: &[FeatureImportance]) -> Table {
    let mut t = Table::new(["rank", "feature", "mean_abs_phi"]);
    for (i, r) in ranking.iter().enumerate() {
        t.push(vec![
            Cell::Int(i as i64 + 1),
            Cell::text(&r.feature),
            Cell::Num(r.mean_abs_phi),
        ]);
    }
    t
}

pub fn dependence_table(pairs: &[(f64, f64)]) -> Table {
    let mut t = Table::new(["feature_value", "phi"]);
    for (v, p) in pairs {
        t.push(vec![Cell::Num(*v), Cell::Num(*p)]);
    }
    t
}
