//! Structural feature vectors of pruned attribution graphs.
//!
//! Every pruned graph maps to a fixed-order vector of `29 + num_layers`
//! values in four groups:
//!
//! 1. high-level counts and output confidence,
//! 2. influence and activation statistics plus a per-layer histogram of
//!    retained features,
//! 3. edge and topology statistics of the directed weighted subgraph,
//! 4. error-to-feature influence ratio, clustering, betweenness spread and
//!    the per-feature logit attribution profile.
//!
//! Weighted shortest paths use the distance `1 / (|w| + eps)`, so stronger
//! attributions are shorter. Both path-length slots hold `-1` when undefined.

mod pca;
mod table;
pub mod topology;

use crate::error::{Error, Result};
use crate::graph::NodeKind;
use crate::prune::PrunedGraph;

pub use pca::{pca_project, Projection};
pub use table::{FeatureTable, RowMeta};
use topology::Digraph;

/// Value stored in a path-length slot that has no defined path.
pub const PATH_SENTINEL: f64 = -1.0;
/// Offset of the layer histogram in the vector.
pub const LAYER_HIST_OFFSET: usize = 11;
/// Number of slots that do not depend on the layer count.
pub const FIXED_FEATURES: usize = 29;

const DISTANCE_EPSILON: f64 = 1e-12;

const GROUP_ONE: [&str; 5] = [
    "total_active_features",
    "pruned_feature_count",
    "pruned_error_count",
    "top1_logit_prob",
    "logit_entropy",
];

const GROUP_TWO: [&str; 6] = [
    "mean_influence_all_pruned",
    "total_error_influence",
    "mean_error_influence",
    "activation_mean",
    "activation_max",
    "activation_std",
];

const GROUP_THREE: [&str; 12] = [
    "edge_weight_sum",
    "edge_weight_mean",
    "edge_weight_std",
    "edge_count",
    "density",
    "weak_component_count",
    "degree_centrality_mean",
    "degree_centrality_max",
    "betweenness_mean",
    "betweenness_max",
    "avg_shortest_path_len",
    "token_to_logit_path_len",
];

const GROUP_FOUR: [&str; 6] = [
    "error_feature_ratio",
    "avg_clustering",
    "betweenness_std",
    "logit_attr_mean",
    "logit_attr_max",
    "logit_attr_std",
];

/// Ordered feature names for graphs with `num_layers` layers.
pub fn feature_manifest(num_layers: usize) -> Vec<String> {
    let mut names: Vec<String> = GROUP_ONE.iter().map(|s| s.to_string()).collect();
    names.extend(GROUP_TWO.iter().map(|s| s.to_string()));
    names.extend((0..num_layers).map(|l| format!("layer_hist_{l}")));
    names.extend(GROUP_THREE.iter().map(|s| s.to_string()));
    names.extend(GROUP_FOUR.iter().map(|s| s.to_string()));
    names
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub manifest: Vec<String>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.manifest
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

/// Mean, max and population standard deviation; zeros when empty.
fn moments(xs: &[f64]) -> (f64, f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, max, var.sqrt())
}

struct Slots {
    values: Vec<f64>,
    index: std::collections::HashMap<&'static str, usize>,
}

impl Slots {
    fn new(num_layers: usize) -> Self {
        let manifest = feature_manifest(num_layers);
        let mut index = std::collections::HashMap::new();
        let fixed = GROUP_ONE
            .iter()
            .chain(&GROUP_TWO)
            .chain(&GROUP_THREE)
            .chain(&GROUP_FOUR);
        for &name in fixed {
            index.insert(name, manifest.iter().position(|m| m == name).unwrap());
        }
        let mut values = vec![0.0; manifest.len()];
        values[index["avg_shortest_path_len"]] = PATH_SENTINEL;
        values[index["token_to_logit_path_len"]] = PATH_SENTINEL;
        Slots { values, index }
    }

    fn set(&mut self, name: &'static str, value: f64) {
        self.values[self.index[name]] = value;
    }
}

/// Distills a pruned graph into its structural feature vector.
pub fn extract_features(pg: &PrunedGraph) -> Result<FeatureVector> {
    let g = &pg.graph;
    let num_layers = g.num_layers() as usize;
    for n in g.nodes() {
        if matches!(n.kind, NodeKind::Feature | NodeKind::Error)
            && (n.layer < 0 || n.layer as usize >= num_layers)
        {
            return Err(Error::LayerMismatch {
                node: n.id,
                layer: n.layer,
                num_layers: g.num_layers(),
            });
        }
    }

    let manifest = feature_manifest(num_layers);
    let mut slots = Slots::new(num_layers);
    let nodes = g.nodes();
    if nodes.len() < 2 {
        return Ok(FeatureVector {
            values: slots.values,
            manifest,
        });
    }

    let influence = |id: u64| pg.influence.get(&id).copied().unwrap_or(0.0);
    let of_kind = |k: NodeKind| nodes.iter().filter(move |n| n.kind == k);

    // group 1
    let probs: Vec<f64> = g.traced_logits().iter().map(|l| l.probability).collect();
    slots.set("total_active_features", g.total_active_features() as f64);
    slots.set("pruned_feature_count", pg.retained_feature_count as f64);
    slots.set("pruned_error_count", pg.retained_error_count as f64);
    slots.set(
        "top1_logit_prob",
        probs.iter().copied().fold(0.0, f64::max),
    );
    slots.set(
        "logit_entropy",
        probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum(),
    );

    // group 2
    let all_influence: Vec<f64> = nodes.iter().map(|n| influence(n.id)).collect();
    slots.set("mean_influence_all_pruned", moments(&all_influence).0);
    let error_influence: Vec<f64> = of_kind(NodeKind::Error).map(|n| influence(n.id)).collect();
    slots.set("total_error_influence", error_influence.iter().sum());
    slots.set("mean_error_influence", moments(&error_influence).0);
    let activations: Vec<f64> = of_kind(NodeKind::Feature)
        .filter_map(|n| n.activation)
        .collect();
    let (a_mean, a_max, a_std) = moments(&activations);
    slots.set("activation_mean", a_mean);
    slots.set("activation_max", a_max);
    slots.set("activation_std", a_std);
    for n in of_kind(NodeKind::Feature) {
        slots.values[LAYER_HIST_OFFSET + n.layer as usize] += 1.0;
    }

    // group 3
    let weights: Vec<f64> = g.edges().iter().map(|e| e.weight).collect();
    let (w_mean, _, w_std) = moments(&weights);
    slots.set("edge_weight_sum", weights.iter().sum());
    slots.set("edge_weight_mean", w_mean);
    slots.set("edge_weight_std", w_std);
    slots.set("edge_count", weights.len() as f64);

    let digraph = Digraph::new(
        nodes.len(),
        g.edges().iter().filter_map(|e| {
            Some((
                g.index_of(e.src)?,
                g.index_of(e.dst)?,
                1.0 / (e.weight.abs() + DISTANCE_EPSILON),
            ))
        }),
    );
    slots.set("density", digraph.density());
    slots.set("weak_component_count", digraph.weak_component_count() as f64);
    let (d_mean, d_max, _) = moments(&digraph.degree_centrality());
    slots.set("degree_centrality_mean", d_mean);
    slots.set("degree_centrality_max", d_max);
    let (b_mean, b_max, b_std) = moments(&digraph.betweenness());
    slots.set("betweenness_mean", b_mean);
    slots.set("betweenness_max", b_max);
    if let Some(avg) = digraph.average_shortest_path_in_largest_component() {
        slots.set("avg_shortest_path_len", avg);
    }
    let indices_of = |k: NodeKind| -> Vec<usize> {
        nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == k)
            .map(|(i, _)| i)
            .collect()
    };
    if let Some(h) = digraph.min_hops(&indices_of(NodeKind::Token), &indices_of(NodeKind::Logit)) {
        slots.set("token_to_logit_path_len", h as f64);
    }

    // group 4
    let outflow = |k: NodeKind| -> f64 {
        g.edges()
            .iter()
            .filter(|e| g.node(e.src).is_some_and(|n| n.kind == k))
            .map(|e| e.weight.abs())
            .sum()
    };
    slots.set(
        "error_feature_ratio",
        outflow(NodeKind::Error) / (outflow(NodeKind::Feature) + DISTANCE_EPSILON),
    );
    slots.set("avg_clustering", digraph.average_clustering());
    slots.set("betweenness_std", b_std);
    let attribution: Vec<f64> = of_kind(NodeKind::Feature).map(|n| influence(n.id)).collect();
    let (s_mean, s_max, s_std) = moments(&attribution);
    slots.set("logit_attr_mean", s_mean);
    slots.set("logit_attr_max", s_max);
    slots.set("logit_attr_std", s_std);

    Ok(FeatureVector {
        values: slots.values,
        manifest,
    })
}
