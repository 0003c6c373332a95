//! Regression trees fitted to second-order boosting statistics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf { value: f64 },
}

/// Flat binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(value: f64) -> Tree {
        Tree {
            nodes: vec![TreeNode::Leaf { value }],
        }
    }

    /// One split with two leaves.
    pub fn stump(feature: usize, threshold: f64, left: f64, right: f64) -> Tree {
        Tree {
            nodes: vec![
                TreeNode::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                    gain: 0.0,
                },
                TreeNode::Leaf { value: left },
                TreeNode::Leaf { value: right },
            ],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub(crate) fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let TreeNode::Leaf { value } = n {
                *value *= factor;
            }
        }
    }

    pub fn splits(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Split { feature, gain, .. } => Some((*feature, *gain)),
            TreeNode::Leaf { .. } => None,
        })
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.splits().map(|(f, _)| f).max()
    }
}

// ----------------------------------------------------------------------------
// Fitting

pub(crate) struct FitParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub lambda: f64,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    /// Number of rows in the sorted list going left.
    left_count: usize,
}

/// Builds one tree on the given rows.
///
/// `columns[f][r]` is feature `f` of row `r`; `sorted[f]` lists the member
/// rows by ascending `columns[f]` value (stable by row index).
pub(crate) fn fit_tree(
    columns: &[Vec<f64>],
    sorted: Vec<Vec<usize>>,
    grad: &[f64],
    hess: &[f64],
    params: &FitParams,
) -> Tree {
    let mut tree = Tree { nodes: Vec::new() };
    grow(&mut tree, columns, sorted, grad, hess, params, 0);
    tree
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn grow(
    tree: &mut Tree,
    columns: &[Vec<f64>],
    sorted: Vec<Vec<usize>>,
    grad: &[f64],
    hess: &[f64],
    params: &FitParams,
    depth: usize,
) -> usize {
    let id = tree.nodes.len();
    // the row set in ascending index order gives a scheduling-free sum order
    let mut members = sorted[0].clone();
    members.sort_unstable();
    let g: f64 = members.iter().map(|&r| grad[r]).sum();
    let h: f64 = members.iter().map(|&r| hess[r]).sum();
    tree.nodes.push(TreeNode::Leaf {
        value: g / (h + params.lambda),
    });

    let n = members.len();
    if depth >= params.max_depth || n < 2 * params.min_samples_leaf.max(1) {
        return id;
    }
    let parent = score(g, h, params.lambda);
    let mut best: Option<Candidate> = None;
    for (f, order) in sorted.iter().enumerate() {
        let col = &columns[f];
        let (mut gl, mut hl) = (0.0, 0.0);
        for i in 0..n - 1 {
            let r = order[i];
            gl += grad[r];
            hl += hess[r];
            let (v, next) = (col[r], col[order[i + 1]]);
            let left = i + 1;
            if v == next || left < params.min_samples_leaf || n - left < params.min_samples_leaf {
                continue;
            }
            let gain = 0.5
                * (score(gl, hl, params.lambda) + score(g - gl, h - hl, params.lambda) - parent);
            if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                let mid = v + (next - v) / 2.0;
                let threshold = if mid > v { mid } else { next };
                best = Some(Candidate {
                    feature: f,
                    threshold,
                    gain,
                    left_count: left,
                });
            }
        }
    }
    let Some(best) = best else { return id };

    let mut goes_left = vec![false; columns[0].len()];
    for &r in &sorted[best.feature][..best.left_count] {
        goes_left[r] = true;
    }
    let (left_sorted, right_sorted): (Vec<Vec<usize>>, Vec<Vec<usize>>) = sorted
        .into_iter()
        .map(|order| order.into_iter().partition(|&r| goes_left[r]))
        .unzip();
    let left = grow(tree, columns, left_sorted, grad, hess, params, depth + 1);
    let right = grow(tree, columns, right_sorted, grad, hess, params, depth + 1);
    tree.nodes[id] = TreeNode::Split {
        feature: best.feature,
        threshold: best.threshold,
        left,
        right,
        gain: best.gain,
    };
    id
}
