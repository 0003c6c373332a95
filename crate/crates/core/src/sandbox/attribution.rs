//! Direct-effect edges of the frozen replacement model.
//!
//! A source writes `a * v_out` into the residual stream at its entry layer;
//! the frozen residual-plus-mixing map carries it forward; a target reads it
//! through its encoder row (features) or unembedding row (logits). Paths
//! through other transcoder features are not part of an edge, since those
//! features are nodes of their own.

use std::collections::BTreeMap;

use nalgebra::DVector;

use super::{forward, ToyModel};
use crate::error::{Error, Result};
use crate::graph::{AttributionGraph, Edge, Node, NodeKind, TracedLogit};

struct Source {
    id: u64,
    entry_layer: usize,
    position: usize,
    vector: DVector<f64>,
}

/// One residual-mixing step applied to a per-position field.
fn propagate(model: &ToyModel, layer: usize, z: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mix = &model.layers[layer].mixing;
    (0..z.len())
        .map(|p| {
            let mut out = z[p].clone();
            for q in 0..=p {
                out += &mix[p][q] * &z[q];
            }
            out
        })
        .collect()
}

fn softmax(logits: &DVector<f64>) -> Vec<f64> {
    let max = logits.max();
    let exp: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.iter().map(|e| e / sum).collect()
}

/// Runs the model and emits its attribution graph with logit nodes for the
/// `top_k_logits` most probable next tokens at the last position.
///
/// Inputs with no active feature still yield a graph of token, error and
/// logit nodes.
pub fn trace_attributions(
    model: &ToyModel,
    tokens: &[u32],
    top_k_logits: usize,
) -> Result<AttributionGraph> {
    if top_k_logits == 0 {
        return Err(Error::InvalidConfig("top_k_logits must be >= 1".into()));
    }
    let trace = forward(model, tokens)?;
    let n = tokens.len();
    let num_layers = model.layers.len();
    let last = n - 1;

    let mut nodes = Vec::new();
    let mut sources = Vec::new();
    let mut next_id = 0u64;
    let mut id = || {
        next_id += 1;
        next_id - 1
    };
    for (p, &tok) in tokens.iter().enumerate() {
        let nid = id();
        nodes.push(Node::token(nid, p as u32, tok));
        sources.push(Source {
            id: nid,
            entry_layer: 0,
            position: p,
            vector: model.embedding.row(tok as usize).transpose(),
        });
    }
    // feature targets by (layer, position): (node id, feature index)
    let mut targets: Vec<Vec<Vec<(u64, usize)>>> = vec![vec![Vec::new(); n]; num_layers];
    for l in 0..num_layers {
        for p in 0..n {
            for (f, &a) in trace.acts[l][p].iter().enumerate() {
                if a > 0.0 {
                    let nid = id();
                    nodes.push(Node::feature(nid, l as i32, p as u32, f as u32, a));
                    targets[l][p].push((nid, f));
                    sources.push(Source {
                        id: nid,
                        entry_layer: l + 1,
                        position: p,
                        vector: model.layers[l].w_dec.column(f) * a,
                    });
                }
            }
            let e = &trace.errors[l][p];
            if e.iter().any(|&v| v != 0.0) {
                let nid = id();
                nodes.push(Node::error(nid, l as i32, p as u32));
                sources.push(Source {
                    id: nid,
                    entry_layer: l + 1,
                    position: p,
                    vector: e.clone(),
                });
            }
        }
    }

    let probs = softmax(trace.last_logits());
    let mut ranked: Vec<usize> = (0..probs.len()).collect();
    ranked.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let traced: Vec<(u64, usize)> = ranked
        .iter()
        .take(top_k_logits)
        .map(|&t| {
            let nid = id();
            nodes.push(Node::logit(nid, num_layers as u32, last as u32, t as u32));
            (nid, t)
        })
        .collect();
    let traced_logits = traced
        .iter()
        .map(|&(_, t)| TracedLogit {
            token_id: t as u32,
            probability: probs[t],
        })
        .collect();

    let mut edges = Vec::new();
    let d = model.config.d_model;
    for s in &sources {
        let mut z: Vec<DVector<f64>> = vec![DVector::zeros(d); n];
        z[s.position] = s.vector.clone();
        for j in s.entry_layer..=num_layers {
            if j == num_layers {
                for &(nid, t) in &traced {
                    let w = model.unembedding.row(t).transpose().dot(&z[last]);
                    if w != 0.0 {
                        edges.push(Edge::new(s.id, nid, w));
                    }
                }
                break;
            }
            for (p, zp) in z.iter().enumerate().skip(s.position) {
                for &(nid, f) in &targets[j][p] {
                    let w = model.layers[j].w_enc.row(f).transpose().dot(zp);
                    if w != 0.0 {
                        edges.push(Edge::new(s.id, nid, w));
                    }
                }
            }
            z = propagate(model, j, &z);
        }
    }

    let active = nodes.iter().filter(|n| n.kind == NodeKind::Feature).count() as u64;
    Ok(AttributionGraph::new(
        num_layers as u32,
        active,
        nodes,
        edges,
        traced_logits,
    ))
}

/// Total linear effect of one unit of each feature's activation on each
/// traced logit, following graph paths with frozen gates.
///
/// Features in `clamped` do not respond to upstream changes. The result is
/// keyed by feature node id, then by logit token id.
pub fn total_effects(
    g: &AttributionGraph,
    clamped: &[u64],
) -> BTreeMap<u64, BTreeMap<u32, f64>> {
    let order = g
        .topological_order()
        .expect("attribution graphs are acyclic");
    let (succ, _) = g.adjacency();
    let nodes = g.nodes();
    let logits: Vec<u32> = nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Logit)
        .filter_map(|n| n.token_id)
        .collect();
    let mut effect: Vec<Option<BTreeMap<u32, f64>>> = vec![None; nodes.len()];
    for &i in order.iter().rev() {
        let node = &nodes[i];
        if node.kind != NodeKind::Feature {
            continue;
        }
        let a = node.activation.expect("features carry activations");
        let mut total: BTreeMap<u32, f64> = logits.iter().map(|&t| (t, 0.0)).collect();
        for &(j, ei) in &succ[i] {
            let unit = g.edges()[ei].weight / a;
            let dst = &nodes[j];
            match dst.kind {
                NodeKind::Logit => {
                    *total.get_mut(&dst.token_id.expect("logit token")).expect("traced") += unit;
                }
                NodeKind::Feature if !clamped.contains(&dst.id) => {
                    for (t, v) in effect[j].as_ref().expect("reverse topological order") {
                        *total.get_mut(t).expect("same logits") += unit * v;
                    }
                }
                _ => {}
            }
        }
        effect[i] = Some(total);
    }
    nodes
        .iter()
        .zip(effect)
        .filter_map(|(n, e)| Some((n.id, e?)))
        .collect()
}
