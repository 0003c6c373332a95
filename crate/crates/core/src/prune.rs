//! Influence computation and influence-based pruning.
//!
//! Influence is the path-summed flow of traced logit probability backwards
//! through the column-normalized absolute adjacency:
//! `influence = sum_k (Aᵀ)^k p`, where `A[u,v] = |w_uv| / (sum_u' |w_u'v| + eps)`
//! and `p` holds each logit's traced probability. On a DAG the series is
//! finite, so it is evaluated exactly in at most `depth` rounds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AttributionGraph, NodeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrunerConfig {
    pub node_threshold: f64,
    pub edge_threshold: f64,
    /// Number of propagation rounds; the graph depth when unset.
    pub max_iterations: Option<usize>,
    pub epsilon: f64,
}

impl Default for PrunerConfig {
    fn default() -> Self {
        PrunerConfig {
            node_threshold: 0.8,
            edge_threshold: 0.98,
            max_iterations: None,
            epsilon: 1e-12,
        }
    }
}

impl PrunerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.node_threshold) || !unit(self.edge_threshold) {
            return Err(Error::InvalidConfig(
                "pruning thresholds must lie in (0, 1]".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrunedGraph {
    pub graph: AttributionGraph,
    /// Influence of every retained node.
    pub influence: BTreeMap<u64, f64>,
    pub retained_feature_count: usize,
    pub retained_error_count: usize,
}

/// Influence of every node on the traced logits, keyed by node id.
pub fn compute_influence(g: &AttributionGraph, cfg: &PrunerConfig) -> Result<BTreeMap<u64, f64>> {
    let influence = influence_by_index(g, cfg)?;
    Ok(g.nodes()
        .iter()
        .zip(influence)
        .map(|(n, x)| (n.id, x))
        .collect())
}

fn influence_by_index(g: &AttributionGraph, cfg: &PrunerConfig) -> Result<Vec<f64>> {
    let order = g.topological_order().map_err(Error::CyclicGraph)?;
    let nodes = g.nodes();
    if !nodes.iter().any(|n| n.kind == NodeKind::Logit) {
        return Err(Error::EmptyLogit);
    }
    let (succ, pred) = g.adjacency();
    let edges = g.edges();

    let column_mass: Vec<f64> = pred
        .iter()
        .map(|ins| ins.iter().map(|&(_, ei)| edges[ei].weight.abs()).sum())
        .collect();

    let rounds = match cfg.max_iterations {
        Some(k) => k,
        None => {
            // longest path, in edges
            let mut depth = vec![0usize; nodes.len()];
            for &i in &order {
                for &(j, _) in &succ[i] {
                    depth[j] = depth[j].max(depth[i] + 1);
                }
            }
            depth.into_iter().max().unwrap_or(0)
        }
    };

    let mut term: Vec<f64> = nodes
        .iter()
        .map(|n| match (n.kind, n.token_id) {
            (NodeKind::Logit, Some(t)) => g.traced_probability(t).unwrap_or(0.0),
            _ => 0.0,
        })
        .collect();
    let mut total = term.clone();
    for _ in 0..rounds {
        let next: Vec<f64> = (0..nodes.len())
            .map(|u| {
                succ[u]
                    .iter()
                    .map(|&(v, ei)| {
                        edges[ei].weight.abs() / (column_mass[v] + cfg.epsilon) * term[v]
                    })
                    .sum()
            })
            .collect();
        if next.iter().all(|&x| x == 0.0) {
            break;
        }
        for (t, x) in total.iter_mut().zip(&next) {
            *t += x;
        }
        term = next;
    }
    Ok(total)
}

/// Keeps every logit, then the smallest descending-influence prefix of the
/// remaining nodes that reaches `node_threshold` of their total influence,
/// then drops the weakest edges while `edge_threshold` of the edge mass
/// (`|w| * influence(dst)`) survives.
pub fn prune_graph(g: &AttributionGraph, cfg: &PrunerConfig) -> Result<PrunedGraph> {
    cfg.validate()?;
    let influence = influence_by_index(g, cfg)?;
    let nodes = g.nodes();

    let mut keep = vec![false; nodes.len()];
    let mut candidates = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        if n.kind == NodeKind::Logit {
            keep[i] = true;
        } else {
            candidates.push(i);
        }
    }
    candidates.sort_by(|&a, &b| {
        influence[b]
            .total_cmp(&influence[a])
            .then(nodes[a].id.cmp(&nodes[b].id))
    });

    if cfg.node_threshold >= 1.0 {
        for &i in &candidates {
            keep[i] = true;
        }
    } else {
        let total: f64 = candidates.iter().map(|&i| influence[i]).sum();
        let target = cfg.node_threshold * total;
        let mut cumulative = 0.0;
        for &i in &candidates {
            if cumulative >= target {
                break;
            }
            keep[i] = true;
            cumulative += influence[i];
        }
    }

    let keep_id = |id: u64| g.index_of(id).is_some_and(|i| keep[i]);
    let infl_of = |id: u64| g.index_of(id).map_or(0.0, |i| influence[i]);

    let mut scored: Vec<(f64, u64, u64)> = g
        .edges()
        .iter()
        .filter(|e| keep_id(e.src) && keep_id(e.dst))
        .map(|e| (e.weight.abs() * infl_of(e.dst), e.src, e.dst))
        .collect();
    let mut dropped = std::collections::BTreeSet::new();
    if cfg.edge_threshold < 1.0 {
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let total: f64 = scored.iter().map(|s| s.0).sum();
        let floor = cfg.edge_threshold * total;
        let mut remaining = total;
        for &(score, src, dst) in &scored {
            if remaining - score >= floor {
                remaining -= score;
                dropped.insert((src, dst));
            } else {
                break;
            }
        }
    }

    let graph = g.induced_subgraph(|n| keep_id(n.id), |e| !dropped.contains(&(e.src, e.dst)));
    let influence = graph.nodes().iter().map(|n| (n.id, infl_of(n.id))).collect();
    Ok(PrunedGraph {
        retained_feature_count: graph.count_kind(NodeKind::Feature),
        retained_error_count: graph.count_kind(NodeKind::Error),
        graph,
        influence,
    })
}
