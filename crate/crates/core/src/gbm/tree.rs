use serde::{Deserialize, Serialize};

/// Tree node in a preorder array. Rows with `value < split_value` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        split_value: f64,
        left: usize,
        right: usize,
        /// Fraction of the node's training hessian (row count, for squared
        /// error) routed to each child.
        cover_left: f64,
        cover_right: f64,
        gain: f64,
    },
    Leaf {
        weight: f64,
        grad_sum: f64,
        hess_sum: f64,
    },
}

/// A regression tree stored in preorder, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Single-leaf tree.
    pub fn leaf(weight: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf {
                weight,
                grad_sum: 0.0,
                hess_sum: 0.0,
            }],
        }
    }

    /// Depth-one tree with the given leaves and left cover.
    pub fn stump(feature: usize, split_value: f64, left: f64, right: f64, cover_left: f64) -> Self {
        Self {
            nodes: vec![
                Node::Split {
                    feature,
                    split_value,
                    left: 1,
                    right: 2,
                    cover_left,
                    cover_right: 1.0 - cover_left,
                    gain: 0.0,
                },
                Node::Leaf {
                    weight: left,
                    grad_sum: 0.0,
                    hess_sum: 0.0,
                },
                Node::Leaf {
                    weight: right,
                    grad_sum: 0.0,
                    hess_sum: 0.0,
                },
            ],
        }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { weight, .. } => return *weight,
                Node::Split {
                    feature,
                    split_value,
                    left,
                    right,
                    ..
                } => {
                    i = if row[*feature] < *split_value {
                        *left
                    } else {
                        *right
                    };
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

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn is_zero_leaf(&self) -> bool {
        matches!(self.nodes.as_slice(), [Node::Leaf { weight, .. }] if *weight == 0.0)
    }

    /// Cover-weighted mean leaf value.
    pub fn expected_value(&self) -> f64 {
        fn go(t: &Tree, i: usize) -> f64 {
            match &t.nodes[i] {
                Node::Leaf { weight, .. } => *weight,
                Node::Split {
                    left,
                    right,
                    cover_left,
                    cover_right,
                    ..
                } => cover_left * go(t, *left) + cover_right * go(t, *right),
            }
        }
        go(self, 0)
    }

    /// Checks preorder layout, child links and cover fractions.
    pub fn check(&self, n_features: usize) -> Result<(), String> {
        fn go(t: &Tree, i: usize, n_features: usize, next: &mut usize) -> Result<(), String> {
            if i != *next {
                return Err(format!("node {i} out of preorder position {next}"));
            }
            *next += 1;
            match t.nodes.get(i) {
                None => Err(format!("dangling child {i}")),
                Some(Node::Leaf { weight, .. }) if !weight.is_finite() => {
                    Err(format!("leaf {i} weight not finite"))
                }
                Some(Node::Leaf { .. }) => Ok(()),
                Some(Node::Split {
                    feature,
                    split_value,
                    left,
                    right,
                    cover_left,
                    cover_right,
                    ..
                }) => {
                    if *feature >= n_features {
                        return Err(format!("node {i} splits on feature {feature}"));
                    }
                    if !split_value.is_finite() {
                        return Err(format!("node {i} split value not finite"));
                    }
                    if !(*cover_left > 0.0 && *cover_right > 0.0)
                        || (cover_left + cover_right - 1.0).abs() > 1e-12
                    {
                        return Err(format!("node {i} covers {cover_left} + {cover_right}"));
                    }
                    go(t, *left, n_features, next)?;
                    go(t, *right, n_features, next)
                }
            }
        }
        let mut next = 0;
        go(self, 0, n_features, &mut next)?;
        if next != self.nodes.len() {
            return Err(format!("{} unreachable nodes", self.nodes.len() - next));
        }
        Ok(())
    }
}
