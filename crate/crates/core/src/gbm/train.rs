use super::{metrics, Dataset, Ensemble, GbmError, Node, TrainConfig, Tree};
use crate::numeric::CompensatedSum;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// Number of trees in the model; round 0 is the base score alone.
    pub round: usize,
    pub train_mae: f64,
    pub train_rmse: f64,
    pub valid_mae: Option<f64>,
    pub valid_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Best-validation-round prefix of the grown trees.
    pub ensemble: Ensemble,
    pub history: Vec<RoundMetrics>,
    pub best_round: usize,
    /// Training-row predictions of `ensemble`, bit-identical to `predict`.
    pub fitted: Vec<f64>,
}

const NONE: usize = usize::MAX;

fn check_finite(data: &Dataset) -> Result<(), GbmError> {
    for i in 0..data.len() {
        if let Some(f) = data.row(i).iter().position(|v| !v.is_finite()) {
            return Err(GbmError::NonFiniteFeature {
                row: i,
                feature: data.feature_names()[f].clone(),
            });
        }
        if !data.target(i).is_finite() {
            return Err(GbmError::NonFiniteTarget(i));
        }
    }
    Ok(())
}

/// Fits a boosted ensemble on `train`, early-stopping on `valid` when it is
/// non-empty.
pub fn train(train: &Dataset, valid: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, GbmError> {
    config.validate()?;
    if train.is_empty() {
        return Err(GbmError::EmptyInput);
    }
    if train.n_features() == 0 {
        return Err(GbmError::InvalidConfig("no feature columns".into()));
    }
    if !valid.is_empty() && valid.feature_names() != train.feature_names() {
        return Err(GbmError::InvalidConfig(
            "validation features differ from training".into(),
        ));
    }
    check_finite(train)?;
    check_finite(valid)?;

    let y = train.targets();
    let first = y[0];
    let base_score = if y.iter().all(|&v| v == first) {
        first
    } else {
        crate::numeric::mean(y).expect("non-empty")
    };

    let n_features = train.n_features();
    let sorted: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..train.len()).collect();
            idx.sort_by(|&a, &b| train.row(a)[f].total_cmp(&train.row(b)[f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut pred = vec![base_score; train.len()];
    let mut valid_pred = vec![base_score; valid.len()];
    let mut trees: Vec<Tree> = Vec::new();
    let record = |round: usize, pred: &[f64], valid_pred: &[f64]| {
        let t = metrics(pred, y);
        let v = (!valid.is_empty()).then(|| metrics(valid_pred, valid.targets()));
        RoundMetrics {
            round,
            train_mae: t.mae,
            train_rmse: t.rmse,
            valid_mae: v.map(|m| m.mae),
            valid_rmse: v.map(|m| m.rmse),
        }
    };
    let score = |m: &RoundMetrics| m.valid_rmse.unwrap_or(m.train_rmse);

    let mut history = vec![record(0, &pred, &valid_pred)];
    let mut best_round = 0;
    let mut best_score = score(&history[0]);
    let mut fitted = pred.clone();
    let mut grad = vec![0.0; train.len()];

    for round in 1..=config.rounds_max {
        for (g, (p, t)) in grad.iter_mut().zip(pred.iter().zip(y)) {
            *g = p - t;
        }
        let (tree, leaf_of_row) = grow_tree(train, &sorted, &grad, config);
        if tree.is_zero_leaf() {
            break;
        }
        for (p, &leaf) in pred.iter_mut().zip(&leaf_of_row) {
            p_add(p, config.learning_rate, leaf_weight(&tree, leaf));
        }
        for (i, p) in valid_pred.iter_mut().enumerate() {
            p_add(p, config.learning_rate, tree.eval(valid.row(i)));
        }
        trees.push(tree);
        let m = record(round, &pred, &valid_pred);
        let s = score(&m);
        history.push(m);
        if s < best_score {
            best_score = s;
            best_round = round;
            fitted.copy_from_slice(&pred);
        } else if round - best_round >= config.early_stopping_patience {
            break;
        }
    }
    trees.truncate(best_round);

    Ok(TrainOutcome {
        ensemble: Ensemble {
            feature_names: train.feature_names().to_vec(),
            base_score,
            learning_rate: config.learning_rate,
            trees,
        },
        history,
        best_round,
        fitted,
    })
}

// Same operation order as `Ensemble::predict_unchecked`.
fn p_add(p: &mut f64, lr: f64, w: f64) {
    *p += lr * w;
}

fn leaf_weight(tree: &Tree, i: usize) -> f64 {
    match tree.nodes[i] {
        Node::Leaf { weight, .. } => weight,
        Node::Split { .. } => unreachable!("rows end in leaves"),
    }
}

enum Draft {
    Open {
        g: f64,
        h: f64,
    },
    Leaf {
        g: f64,
        h: f64,
    },
    Split {
        feature: usize,
        split_value: f64,
        left: usize,
        right: usize,
        cover_left: f64,
        gain: f64,
    },
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    split_value: f64,
}

fn node_sums(rows: impl Iterator<Item = usize>, grad: &[f64]) -> (f64, f64) {
    let mut g = CompensatedSum::new();
    let mut h = 0.0;
    for r in rows {
        g.add(grad[r]);
        h += 1.0;
    }
    (g.total(), h)
}

/// Grows one tree level by level. Returns the tree in preorder and the leaf
/// index each training row lands in.
fn grow_tree(
    data: &Dataset,
    sorted: &[Vec<usize>],
    grad: &[f64],
    config: &TrainConfig,
) -> (Tree, Vec<usize>) {
    let n = data.len();
    let lambda = config.lambda;
    let score = |g: f64, h: f64| g * g / (h + lambda);

    let (g0, h0) = node_sums(0..n, grad);
    let mut drafts = vec![Draft::Open { g: g0, h: h0 }];
    let mut row_node = vec![0usize; n];
    let mut open: Vec<usize> = vec![0];

    for depth in 0..=config.max_depth {
        if open.is_empty() {
            break;
        }
        let mut slot = vec![NONE; drafts.len()];
        for (k, &d) in open.iter().enumerate() {
            slot[d] = k;
        }
        let totals: Vec<(f64, f64)> = open
            .iter()
            .map(|&d| match drafts[d] {
                Draft::Open { g, h } => (g, h),
                _ => unreachable!(),
            })
            .collect();
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];

        if depth < config.max_depth {
            let mut gl = vec![0.0; open.len()];
            let mut hl = vec![0.0; open.len()];
            let mut last: Vec<Option<f64>> = vec![None; open.len()];
            for (f, order) in sorted.iter().enumerate() {
                gl.fill(0.0);
                hl.fill(0.0);
                last.fill(None);
                for &r in order {
                    let d = row_node[r];
                    if d == NONE || slot[d] == NONE {
                        continue;
                    }
                    let k = slot[d];
                    let v = data.row(r)[f];
                    if let Some(lv) = last[k] {
                        if v > lv {
                            let (g, h) = totals[k];
                            let (gr, hr) = (g - gl[k], h - hl[k]);
                            if hl[k] >= config.min_child_weight && hr >= config.min_child_weight {
                                let gain =
                                    0.5 * (score(gl[k], hl[k]) + score(gr, hr) - score(g, h)) - config.gamma;
                                if gain > 0.0 && best[k].is_none_or(|b| gain > b.gain) {
                                    let mut mid = lv + (v - lv) / 2.0;
                                    if !(lv < mid) {
                                        mid = v;
                                    }
                                    best[k] = Some(Candidate {
                                        gain,
                                        feature: f,
                                        split_value: mid,
                                    });
                                }
                            }
                        }
                    }
                    gl[k] += grad[r];
                    hl[k] += 1.0;
                    last[k] = Some(v);
                }
            }
        }

        let mut next_open = Vec::new();
        let mut children = vec![(NONE, NONE); open.len()];
        for (k, &d) in open.iter().enumerate() {
            let (g, h) = totals[k];
            match best[k] {
                None => drafts[d] = Draft::Leaf { g, h },
                Some(c) => {
                    let l = drafts.len();
                    drafts.push(Draft::Open { g: 0.0, h: 0.0 });
                    drafts.push(Draft::Open { g: 0.0, h: 0.0 });
                    drafts[d] = Draft::Split {
                        feature: c.feature,
                        split_value: c.split_value,
                        left: l,
                        right: l + 1,
                        cover_left: 0.0,
                        gain: c.gain,
                    };
                    children[k] = (l, l + 1);
                    next_open.push(l);
                    next_open.push(l + 1);
                }
            }
        }
        for (r, node) in row_node.iter_mut().enumerate() {
            let d = *node;
            if d == NONE || slot[d] == NONE {
                continue;
            }
            if let Draft::Split {
                feature,
                split_value,
                left,
                right,
                ..
            } = drafts[d]
            {
                *node = if data.row(r)[feature] < split_value {
                    left
                } else {
                    right
                };
            }
        }
        let mut sums: Vec<(CompensatedSum, f64)> = (0..drafts.len()).map(|_| Default::default()).collect();
        for r in 0..n {
            let d = row_node[r];
            if matches!(drafts[d], Draft::Open { .. }) {
                sums[d].0.add(grad[r]);
                sums[d].1 += 1.0;
            }
        }
        for (k, &d) in open.iter().enumerate() {
            let (l, r) = children[k];
            if l == NONE {
                continue;
            }
            for c in [l, r] {
                drafts[c] = Draft::Open {
                    g: sums[c].0.total(),
                    h: sums[c].1,
                };
            }
            if let Draft::Split { cover_left, .. } = &mut drafts[d] {
                *cover_left = sums[l].1 / totals[k].1;
            }
        }
        open = next_open;
    }

    // Relabel into preorder.
    let mut nodes = Vec::with_capacity(drafts.len());
    let mut new_id = vec![NONE; drafts.len()];
    fn emit(d: usize, drafts: &[Draft], nodes: &mut Vec<Node>, new_id: &mut [usize], lambda: f64) -> usize {
        let me = nodes.len();
        new_id[d] = me;
        match drafts[d] {
            Draft::Leaf { g, h } => nodes.push(Node::Leaf {
                weight: -g / (h + lambda),
                grad_sum: g,
                hess_sum: h,
            }),
            Draft::Split {
                feature,
                split_value,
                left,
                right,
                cover_left,
                gain,
            } => {
                nodes.push(Node::Leaf {
                    weight: 0.0,
                    grad_sum: 0.0,
                    hess_sum: 0.0,
                });
                let l = emit(left, drafts, nodes, new_id, lambda);
                let r = emit(right, drafts, nodes, new_id, lambda);
                nodes[me] = Node::Split {
                    feature,
                    split_value,
                    left: l,
                    right: r,
                    cover_left,
                    cover_right: 1.0 - cover_left,
                    gain,
                };
            }
            Draft::Open { .. } => unreachable!("all nodes closed"),
        }
        me
    }
    emit(0, &drafts, &mut nodes, &mut new_id, lambda);
    let leaf_of_row = row_node.iter().map(|&d| new_id[d]).collect();
    (Tree { nodes }, leaf_of_row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn one_feature(xs: &[f64], ys: &[f64]) -> Dataset {
        let mut d = Dataset::new(vec!["x".into()]);
        for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
            d.push(format!("{i}"), &[x], y);
        }
        d
    }

    fn empty() -> Dataset {
        Dataset::new(vec!["x".into()])
    }

    #[test]
    fn two_row_newton_step() {
        let d = one_feature(&[0.0, 1.0], &[0.0, 10.0]);
        let cfg = TrainConfig {
            learning_rate: 1.0,
            max_depth: 1,
            lambda: 0.0,
            gamma: 0.0,
            rounds_max: 10,
            ..Default::default()
        };
        let out = train(&d, &empty(), &cfg).unwrap();
        assert_eq!(out.ensemble.base_score, 5.0);
        assert_eq!(out.ensemble.trees.len(), 1);
        assert_eq!(out.ensemble.trees[0], {
            let mut t = Tree::stump(0, 0.5, -5.0, 5.0, 0.5);
            if let Node::Split { gain, .. } = &mut t.nodes[0] {
                *gain = 25.0;
            }
            for (n, g) in t.nodes[1..].iter_mut().zip([5.0, -5.0]) {
                *n = Node::Leaf {
                    weight: -g,
                    grad_sum: g,
                    hess_sum: 1.0,
                };
            }
            t
        });
        assert_eq!(out.fitted, vec![0.0, 10.0]);
        assert_eq!(out.ensemble.predict(&[0.0]).unwrap(), 0.0);
        assert_eq!(out.ensemble.predict(&[1.0]).unwrap(), 10.0);
    }

    #[test]
    fn constant_target_is_a_fixed_point() {
        let xs: Vec<f64> = (0..20).map(f64::from).collect();
        let d = one_feature(&xs, &[63.7; 20]);
        let cfg = TrainConfig {
            lambda: 0.0,
            rounds_max: 10,
            ..Default::default()
        };
        let out = train(&d, &empty(), &cfg).unwrap();
        assert!(out.ensemble.trees.is_empty());
        for x in xs {
            assert_eq!(out.ensemble.predict(&[x]).unwrap(), 63.7);
        }
    }

    fn random_data(seed: u64, n: usize, f: usize) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let names = (0..f).map(|i| format!("f{i}")).collect();
        let mut d = Dataset::new(names);
        for i in 0..n {
            let row: Vec<f64> = (0..f).map(|_| (rng.random_range(0..20) as f64) / 2.0).collect();
            let y = 3.0 * row[0] - row[1 % f] * row[0].sin() + rng.random_range(-1.0..1.0);
            d.push(format!("{i}"), &row, y);
        }
        d
    }

    #[test]
    fn train_rmse_never_increases() {
        let d = random_data(7, 300, 4);
        let cfg = TrainConfig {
            learning_rate: 0.3,
            rounds_max: 200,
            max_depth: 3,
            ..Default::default()
        };
        let out = train(&d, &empty(), &cfg).unwrap();
        for w in out.history.windows(2) {
            assert!(w[1].train_rmse <= w[0].train_rmse + 1e-12, "{w:?}");
        }
    }

    #[test]
    fn stump_matches_exhaustive_search() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for case in 0..50 {
            let n = rng.random_range(2..=50);
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..15) as f64).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
            let d = one_feature(&xs, &ys);
            let cfg = TrainConfig {
                learning_rate: 1.0,
                rounds_max: 10,
                max_depth: 1,
                min_child_weight: 0.0,
                ..Default::default()
            };
            let out = train(&d, &empty(), &cfg).unwrap();
            // Brute force over every distinct threshold: minimise post-split
            // squared error with λ = 1 Newton leaves.
            let base = crate::numeric::mean(&ys).unwrap();
            let mut distinct = xs.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let mut best: Option<(f64, f64)> = None;
            for w in distinct.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                for (&x, &y) in xs.iter().zip(&ys) {
                    if x < t {
                        gl += base - y;
                        hl += 1.0;
                    } else {
                        gr += base - y;
                        hr += 1.0;
                    }
                }
                let g = gl + gr;
                let gain = 0.5 * (gl * gl / (hl + 1.0) + gr * gr / (hr + 1.0) - g * g / (hl + hr + 1.0));
                if gain > 1e-9 && best.is_none_or(|(bg, _)| gain > bg + 1e-9) {
                    best = Some((gain, t));
                }
            }
            match (best, out.ensemble.trees.first()) {
                (None, None) => {}
                (Some((_, t)), Some(tree)) => match tree.nodes[0] {
                    Node::Split { split_value, .. } => assert_eq!(split_value, t, "case {case}"),
                    _ => panic!("case {case}: expected a split"),
                },
                (b, t) => panic!("case {case}: oracle {b:?}, tree {t:?}"),
            }
        }
    }

    #[test]
    fn leaves_satisfy_newton_condition() {
        let d = random_data(3, 200, 3);
        let cfg = TrainConfig {
            rounds_max: 30,
            lambda: 2.5,
            ..Default::default()
        };
        let out = train(&d, &empty(), &cfg).unwrap();
        for t in &out.ensemble.trees {
            t.check(3).unwrap();
            assert!(t.depth() <= cfg.max_depth);
            for n in &t.nodes {
                if let Node::Leaf {
                    weight,
                    grad_sum,
                    hess_sum,
                } = n
                {
                    assert!((weight * (hess_sum + cfg.lambda) + grad_sum).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn fitted_values_match_predict_bitwise() {
        let d = random_data(5, 250, 4);
        let (tr, va) = super::super::split_data(&d, 0.9, 1).unwrap();
        let cfg = TrainConfig {
            rounds_max: 120,
            learning_rate: 0.2,
            early_stopping_patience: 10,
            ..Default::default()
        };
        let out = train(&tr, &va, &cfg).unwrap();
        assert_eq!(out.ensemble.trees.len(), out.best_round);
        for i in 0..tr.len() {
            assert_eq!(out.ensemble.predict(tr.row(i)).unwrap(), out.fitted[i]);
        }
        let best = out.history[out.best_round].valid_rmse.unwrap();
        assert!(out.history.iter().all(|m| m.valid_rmse.unwrap() >= best));
    }

    #[test]
    fn deterministic_model() {
        let d = random_data(9, 300, 5);
        let (tr, va) = super::super::split_data(&d, 0.9, 4).unwrap();
        let cfg = TrainConfig::default();
        let a = train(&tr, &va, &cfg).unwrap();
        let b = train(&tr, &va, &cfg).unwrap();
        let doc = |o: &TrainOutcome| super::super::ModelDocument::new(&cfg, o).to_json();
        assert_eq!(doc(&a), doc(&b));
        let back = super::super::ModelDocument::from_json(&doc(&a)).unwrap();
        assert_eq!(back.ensemble(), a.ensemble);
    }

    #[test]
    fn rejects_non_finite_input() {
        let mut d = one_feature(&[1.0, 2.0], &[1.0, f64::INFINITY]);
        assert_eq!(
            train(&d, &empty(), &TrainConfig::default()),
            Err(GbmError::NonFiniteTarget(1))
        );
        d = one_feature(&[1.0, f64::NAN], &[1.0, 2.0]);
        assert!(matches!(
            train(&d, &empty(), &TrainConfig::default()),
            Err(GbmError::NonFiniteFeature { row: 1, .. })
        ));
    }
}
