//! Second-order gradient boosting of shallow regression trees on the
//! logistic loss.
//!
//! Each round computes `g = p - y` and `h = p (1 - p)` at the current
//! margins and grows a tree by exact greedy search over every feature and
//! every midpoint between consecutive distinct values. A split is kept only
//! when
//!
//! ```text
//! 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma > 0
//! ```
//!
//! and every leaf stores `-G/(H+lambda)` for its members; the margin adds
//! `eta` times the leaf weight. Samples with `x < threshold` go left.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XgbParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub eta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for XgbParams {
    fn default() -> Self {
        XgbParams {
            rounds: 16,
            max_depth: 2,
            eta: 0.4,
            gamma: 0.1,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        weight: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A binary tree stored as a node arena rooted at index 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_weight(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => idx = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub base_score_logit: f64,
    pub eta: f64,
    pub trees: Vec<Tree>,
}

impl TreeEnsembleModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score_logit + self.eta * self.trees.iter().map(|t| t.leaf_weight(x)).sum::<f64>()
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

pub fn train_xgb(x: &DMatrix<f64>, y: &[Label], params: &XgbParams) -> Result<TreeEnsembleModel> {
    Ok(train_xgb_traced(x, y, params)?.0)
}

/// Trains and also returns the mean training log-loss before the first
/// round and after each round.
pub fn train_xgb_traced(
    x: &DMatrix<f64>,
    y: &[Label],
    params: &XgbParams,
) -> Result<(TreeEnsembleModel, Vec<f64>)> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Empty("xgb needs at least one sample"));
    }
    let targets: Vec<f64> = y.iter().map(|&l| f64::from(l)).collect();
    let mut model = TreeEnsembleModel {
        base_score_logit: 0.0,
        eta: params.eta,
        trees: Vec::with_capacity(params.rounds),
    };
    let mut margins = vec![model.base_score_logit; n];
    let mut trace = vec![log_loss(&margins, &targets)];

    // Per-feature sample orderings are fixed across rounds.
    let orders: Vec<Vec<usize>> = (0..x.ncols())
        .map(|j| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[(a, j)].total_cmp(&x[(b, j)]).then(a.cmp(&b)));
            idx
        })
        .collect();

    for _ in 0..params.rounds {
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n];
        for i in 0..n {
            let p = sigmoid(margins[i]);
            g[i] = p - targets[i];
            h[i] = p * (1.0 - p);
        }
        let members = vec![true; n];
        let mut builder = TreeBuilder {
            x,
            g: &g,
            h: &h,
            orders: &orders,
            params,
            nodes: Vec::new(),
        };
        builder.grow(&members, 0);
        let tree = Tree {
            nodes: builder.nodes,
        };
        for (i, m) in margins.iter_mut().enumerate() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            *m += params.eta * tree.leaf_weight(&row);
        }
        model.trees.push(tree);
        trace.push(log_loss(&margins, &targets));
    }
    Ok((model, trace))
}

pub fn log_loss(margins: &[f64], targets: &[f64]) -> f64 {
    let n = margins.len() as f64;
    margins
        .iter()
        .zip(targets)
        .map(|(&z, &t)| softplus(z) - t * z)
        .sum::<f64>()
        / n
}

struct TreeBuilder<'a> {
    x: &'a DMatrix<f64>,
    g: &'a [f64],
    h: &'a [f64],
    orders: &'a [Vec<usize>],
    params: &'a XgbParams,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    /// Appends the subtree for `members` and returns its node index.
    fn grow(&mut self, members: &[bool], depth: usize) -> usize {
        let (g_sum, h_sum) = self.sums(members);
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf {
            weight: -g_sum / (h_sum + self.params.lambda),
        });
        if depth >= self.params.max_depth {
            return idx;
        }
        let Some(best) = self.best_split(members, g_sum, h_sum) else {
            return idx;
        };
        if best.gain - self.params.gamma <= 0.0 {
            return idx;
        }
        let left_members: Vec<bool> = (0..members.len())
            .map(|i| members[i] && self.x[(i, best.feature)] < best.threshold)
            .collect();
        let right_members: Vec<bool> = (0..members.len())
            .map(|i| members[i] && !left_members[i])
            .collect();
        let left = self.grow(&left_members, depth + 1);
        let right = self.grow(&right_members, depth + 1);
        self.nodes[idx] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        idx
    }

    fn sums(&self, members: &[bool]) -> (f64, f64) {
        members
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .fold((0.0, 0.0), |(g, h), (i, _)| (g + self.g[i], h + self.h[i]))
    }

    fn best_split(&self, members: &[bool], g_sum: f64, h_sum: f64) -> Option<BestSplit> {
        let lambda = self.params.lambda;
        let parent = g_sum * g_sum / (h_sum + lambda);
        let mut best: Option<BestSplit> = None;
        for (feature, order) in self.orders.iter().enumerate() {
            let mut g_left = 0.0;
            let mut h_left = 0.0;
            let mut prev: Option<(usize, f64)> = None;
            for &i in order.iter().filter(|&&i| members[i]) {
                let v = self.x[(i, feature)];
                if let Some((_, pv)) = prev {
                    if v > pv {
                        let g_right = g_sum - g_left;
                        let h_right = h_sum - h_left;
                        let gain = 0.5
                            * (g_left * g_left / (h_left + lambda) + g_right * g_right / (h_right + lambda)
                                - parent);
                        if best.as_ref().is_none_or(|b| gain > b.gain) {
                            let mut threshold = pv + (v - pv) / 2.0;
                            // Adjacent floats: the midpoint may round onto the lower value.
                            if threshold <= pv {
                                threshold = v;
                            }
                            best = Some(BestSplit {
                                gain,
                                feature,
                                threshold,
                            });
                        }
                    }
                }
                g_left += self.g[i];
                h_left += self.h[i];
                prev = Some((i, v));
            }
        }
        best
    }
}
