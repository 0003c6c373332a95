//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written from the definitions, by enumeration where
//! possible, and shares no code with the library beyond its data types.

#![allow(dead_code)]

use std::collections::BTreeMap;

use attrgraph_core::graph::{AttributionGraph, Edge, Node, NodeKind, TracedLogit};
use attrgraph_core::sandbox::ToyModel;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-12;

// ---------------------------------------------------------------------------
// ranking metrics

/// Fraction of (positive, negative) pairs ordered correctly, ties counting half.
pub fn auroc_by_pairs(scores: &[f64], positive: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Distinct score values, largest first.
fn thresholds(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

fn counts_at(scores: &[f64], positive: &[bool], threshold: f64) -> (usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    for (&s, &p) in scores.iter().zip(positive) {
        if s >= threshold {
            if p {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (tp, fp)
}

/// Step-wise average precision over every threshold `score >= t`.
pub fn ap_by_sweep(scores: &[f64], positive: &[bool]) -> f64 {
    let total_pos = positive.iter().filter(|&&p| p).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds(scores) {
        let (tp, fp) = counts_at(scores, positive, t);
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// FPR at the highest threshold whose TPR reaches 95%.
pub fn fpr95_by_sweep(scores: &[f64], positive: &[bool]) -> f64 {
    let total_pos = positive.iter().filter(|&&p| p).count() as f64;
    let total_neg = positive.len() as f64 - total_pos;
    for t in thresholds(scores) {
        let (tp, fp) = counts_at(scores, positive, t);
        if tp as f64 / total_pos >= 0.95 {
            return fp as f64 / total_neg;
        }
    }
    unreachable!("the lowest threshold admits every positive")
}

/// A random scoring instance with both classes present. Half the instances
/// draw scores from a handful of values so ties are common.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=max_n);
    let tied = rng.random_bool(0.5);
    let scores: Vec<f64> = (0..n)
        .map(|_| {
            if tied {
                rng.random_range(0..5) as f64 * 0.25
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
        .collect();
    let mut positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    positive[0] = true;
    positive[1] = false;
    positive.shuffle(rng);
    (scores, positive)
}

// ---------------------------------------------------------------------------
// random attribution graphs

/// A valid layered attribution graph with at most `max_nodes` nodes.
///
/// Node ids are shuffled so that id order says nothing about layer order.
/// With `discrete_weights` every |w| comes from {0.5, 1, 2}, which makes
/// equal-length shortest paths frequent.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize, discrete_weights: bool) -> AttributionGraph {
    assert!(max_nodes >= 3);
    let num_layers = rng.random_range(1..=3u32);
    let n = rng.random_range(3..=max_nodes);
    let num_tokens = rng.random_range(1..=2.min(n - 2));
    let num_logits = rng.random_range(1..=2.min(n - num_tokens - 1));
    let inner = n - num_tokens - num_logits;

    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
    ids.shuffle(rng);
    let mut ids = ids.into_iter();
    let mut nodes = Vec::with_capacity(n);
    for p in 0..num_tokens {
        nodes.push(Node::token(ids.next().unwrap(), p as u32, rng.random_range(0..100)));
    }
    let mut error_slot = 0u32;
    for f in 0..inner {
        let layer = rng.random_range(0..num_layers as i32);
        let id = ids.next().unwrap();
        if rng.random_bool(0.25) {
            nodes.push(Node::error(id, layer, error_slot));
            error_slot += 1;
        } else {
            let act = rng.random_range(0.05..3.0);
            nodes.push(Node::feature(id, layer, 0, f as u32, act));
        }
    }
    let mut traced = Vec::new();
    let mut mass_left = 1.0;
    for k in 0..num_logits {
        let token = 500 + k as u32;
        nodes.push(Node::logit(ids.next().unwrap(), num_layers, 0, token));
        let p = rng.random_range(0.05..0.5f64).min(mass_left * 0.9);
        mass_left -= p;
        traced.push(TracedLogit {
            token_id: token,
            probability: p,
        });
    }

    let density = rng.random_range(0.15..0.7);
    let mut edges = Vec::new();
    for s in &nodes {
        for d in &nodes {
            if s.layer < d.layer && rng.random_bool(density) {
                let magnitude = if discrete_weights {
                    [0.5, 1.0, 2.0][rng.random_range(0..3)]
                } else {
                    rng.random_range(0.05..2.0)
                };
                let sign = if rng.random_bool(0.7) { 1.0 } else { -1.0 };
                edges.push(Edge::new(s.id, d.id, sign * magnitude));
            }
        }
    }
    let features = nodes.iter().filter(|n| n.kind == NodeKind::Feature).count() as u64;
    AttributionGraph::new(num_layers, features + rng.random_range(0..5), nodes, edges, traced)
}

/// Index-based view of a graph for the enumeration oracles.
pub struct Plain {
    pub n: usize,
    pub kinds: Vec<NodeKind>,
    /// `(src, dst, weight)` over node indices.
    pub edges: Vec<(usize, usize, f64)>,
}

impl Plain {
    pub fn of(g: &AttributionGraph) -> Self {
        let pos: BTreeMap<u64, usize> = g.nodes().iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        Plain {
            n: g.nodes().len(),
            kinds: g.nodes().iter().map(|n| n.kind).collect(),
            edges: g
                .edges()
                .iter()
                .map(|e| (pos[&e.src], pos[&e.dst], e.weight))
                .collect(),
        }
    }

    fn out_edges(&self, v: usize) -> impl Iterator<Item = &(usize, usize, f64)> {
        self.edges.iter().filter(move |e| e.0 == v)
    }

    /// Every directed path from `s` to `t`, as node sequences, by DFS.
    pub fn all_paths(&self, s: usize, t: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut stack = vec![s];
        self.extend_paths(t, &mut stack, &mut out);
        out
    }

    fn extend_paths(&self, t: usize, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let v = *stack.last().unwrap();
        if v == t && stack.len() > 1 {
            out.push(stack.clone());
            return;
        }
        for &(_, d, _) in self.out_edges(v) {
            stack.push(d);
            self.extend_paths(t, stack, out);
            stack.pop();
        }
    }

    fn weight(&self, a: usize, b: usize) -> f64 {
        self.edges.iter().find(|e| e.0 == a && e.1 == b).unwrap().2
    }

    pub fn path_length(&self, path: &[usize]) -> f64 {
        path.windows(2)
            .map(|w| 1.0 / (self.weight(w[0], w[1]).abs() + EPS))
            .sum()
    }

    fn undirected(&self) -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; self.n]; self.n];
        for &(s, d, _) in &self.edges {
            adj[s][d] = true;
            adj[d][s] = true;
        }
        adj
    }

    /// Weak-component label per node via the transitive closure of the
    /// undirected adjacency; labels are the smallest member index.
    pub fn components(&self) -> Vec<usize> {
        let mut reach = self.undirected();
        for v in 0..self.n {
            reach[v][v] = true;
        }
        for k in 0..self.n {
            for i in 0..self.n {
                for j in 0..self.n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        (0..self.n)
            .map(|v| (0..self.n).find(|&u| reach[v][u]).unwrap())
            .collect()
    }

    pub fn hops(&self, s: usize, t: usize) -> Option<usize> {
        self.all_paths(s, t).iter().map(|p| p.len() - 1).min()
    }
}

/// Brute-force statistics of one graph, named as in the feature manifest.
pub struct GraphOracle {
    pub density: f64,
    pub weak_component_count: f64,
    pub degree_centrality: Vec<f64>,
    pub betweenness: Vec<f64>,
    pub avg_clustering: f64,
    pub avg_shortest_path_len: f64,
    pub token_to_logit_path_len: f64,
}

pub fn graph_oracle(g: &AttributionGraph) -> GraphOracle {
    let pg = Plain::of(g);
    let n = pg.n;
    let tie = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);

    let mut betweenness = vec![0.0; n];
    for s in 0..n {
        for t in 0..n {
            if s == t {
                continue;
            }
            let paths = pg.all_paths(s, t);
            if paths.is_empty() {
                continue;
            }
            let lengths: Vec<f64> = paths.iter().map(|p| pg.path_length(p)).collect();
            let best = lengths.iter().copied().fold(f64::INFINITY, f64::min);
            let shortest: Vec<&Vec<usize>> = paths
                .iter()
                .zip(&lengths)
                .filter(|(_, &l)| tie(l, best))
                .map(|(p, _)| p)
                .collect();
            let sigma = shortest.len() as f64;
            for v in 0..n {
                if v == s || v == t {
                    continue;
                }
                let through = shortest.iter().filter(|p| p.contains(&v)).count() as f64;
                betweenness[v] += through / sigma;
            }
        }
    }

    let adj = pg.undirected();
    let mut clustering = 0.0;
    for v in 0..n {
        let nb: Vec<usize> = (0..n).filter(|&u| u != v && adj[v][u]).collect();
        let k = nb.len();
        if k < 2 {
            continue;
        }
        let mut closed = 0;
        for a in 0..n {
            for b in a + 1..n {
                if adj[v][a] && adj[v][b] && adj[a][b] && a != v && b != v {
                    closed += 1;
                }
            }
        }
        clustering += closed as f64 / (k * (k - 1) / 2) as f64;
    }

    let label = pg.components();
    let mut roots: Vec<usize> = label.clone();
    roots.sort();
    roots.dedup();
    let size = |r: usize| label.iter().filter(|&&l| l == r).count();
    // roots ascend, so the first maximum is the component holding the smaller node
    let mut biggest = roots[0];
    for &r in &roots {
        if size(r) > size(biggest) {
            biggest = r;
        }
    }
    let members: Vec<usize> = (0..n).filter(|&v| label[v] == biggest).collect();
    let mut hop_sum = 0usize;
    let mut pairs = 0usize;
    for &s in &members {
        for &t in &members {
            if s != t {
                if let Some(h) = pg.hops(s, t) {
                    hop_sum += h;
                    pairs += 1;
                }
            }
        }
    }

    let of_kind = |k: NodeKind| -> Vec<usize> { (0..n).filter(|&v| pg.kinds[v] == k).collect() };
    let logits = of_kind(NodeKind::Logit);
    let token_to_logit = of_kind(NodeKind::Token)
        .into_iter()
        .flat_map(|s| logits.iter().filter_map(|&t| pg.hops(s, t)).collect::<Vec<_>>())
        .min();

    let degree_centrality = (0..n)
        .map(|v| {
            pg.edges.iter().filter(|e| e.0 == v || e.1 == v).count() as f64 / (n - 1) as f64
        })
        .collect();

    GraphOracle {
        density: pg.edges.len() as f64 / (n * (n - 1)) as f64,
        weak_component_count: roots.len() as f64,
        degree_centrality,
        betweenness,
        avg_clustering: clustering / n as f64,
        avg_shortest_path_len: if pairs > 0 {
            hop_sum as f64 / pairs as f64
        } else {
            -1.0
        },
        token_to_logit_path_len: token_to_logit.map_or(-1.0, |h| h as f64),
    }
}

/// Mean, max and population standard deviation.
pub fn summary(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, max, var.sqrt())
}

/// Influence as an explicit sum over paths to every logit of the products of
/// column-normalized absolute weights, seeded by traced probability.
pub fn influence_by_paths(g: &AttributionGraph) -> Vec<f64> {
    let pg = Plain::of(g);
    let mut column = vec![0.0; pg.n];
    for &(_, d, w) in &pg.edges {
        column[d] += w.abs();
    }
    let norm = |a: usize, b: usize| pg.weight(a, b).abs() / (column[b] + EPS);
    let seed: Vec<f64> = g
        .nodes()
        .iter()
        .map(|n| match n.kind {
            NodeKind::Logit => g.traced_probability(n.token_id.unwrap()).unwrap_or(0.0),
            _ => 0.0,
        })
        .collect();
    (0..pg.n)
        .map(|u| {
            let mut total = seed[u];
            for t in (0..pg.n).filter(|&t| pg.kinds[t] == NodeKind::Logit) {
                for path in pg.all_paths(u, t) {
                    let product: f64 = path.windows(2).map(|w| norm(w[0], w[1])).product();
                    total += seed[t] * product;
                }
            }
            total
        })
        .collect()
}

// ---------------------------------------------------------------------------
// dense symmetric eigensolver

/// Cyclic Jacobi rotations; returns eigenvalues and eigenvectors as columns.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i][i]).collect();
    (values, v)
}

// ---------------------------------------------------------------------------
// frozen replay of the toy model

/// Which sources a frozen replay switches off.
#[derive(Default, Clone)]
pub struct Ablation {
    /// Token positions whose embedding is zeroed.
    pub tokens: Vec<usize>,
    /// `(layer, position, feature)` whose frozen output is zeroed.
    pub features: Vec<(usize, usize, usize)>,
    /// `(layer, position)` whose injected offset is zeroed.
    pub errors: Vec<(usize, usize)>,
}

impl Ablation {
    pub fn everything(model: &ToyModel, positions: usize) -> Self {
        let layers = model.layers.len();
        let m = model.config.num_features;
        Ablation {
            tokens: (0..positions).collect(),
            features: (0..layers)
                .flat_map(|l| (0..positions).flat_map(move |p| (0..m).map(move |f| (l, p, f))))
                .collect(),
            errors: (0..layers)
                .flat_map(|l| (0..positions).map(move |p| (l, p)))
                .collect(),
        }
    }
}

/// What a replay holds fixed in place of the nonlinearity.
#[derive(Clone, Copy)]
pub enum Frozen<'a> {
    /// Every feature output pinned to a recorded value.
    Outputs(&'a [Vec<DVector<f64>>]),
    /// Every gate pinned; outputs follow the pre-activation where open.
    Gates(&'a [Vec<Vec<bool>>]),
}

/// Pre-activations of every layer and last-position logits of the model
/// made linear by `frozen`, with the sources in `off` switched off (ablated
/// features output zero).
pub struct Replay {
    pub preacts: Vec<Vec<DVector<f64>>>,
    pub logits: DVector<f64>,
}

pub fn frozen_replay(model: &ToyModel, tokens: &[u32], frozen: Frozen, off: &Ablation) -> Replay {
    let n = tokens.len();
    let d = model.config.d_model;
    let mut x: Vec<DVector<f64>> = (0..n)
        .map(|p| {
            if off.tokens.contains(&p) {
                DVector::zeros(d)
            } else {
                model.embedding.row(tokens[p] as usize).transpose()
            }
        })
        .collect();
    let mut preacts = Vec::new();
    for (l, layer) in model.layers.iter().enumerate() {
        let mut pre_l = Vec::new();
        let mut next = Vec::new();
        for p in 0..n {
            let pre = &layer.w_enc * &x[p] + &layer.b_enc;
            let mut a = match frozen {
                Frozen::Outputs(acts) => acts[l][p].clone(),
                Frozen::Gates(gates) => {
                    DVector::from_fn(pre.len(), |i, _| if gates[l][p][i] { pre[i] } else { 0.0 })
                }
            };
            for &(fl, fp, ff) in &off.features {
                if fl == l && fp == p {
                    a[ff] = 0.0;
                }
            }
            let mut y = &x[p] + &layer.w_dec * a + &layer.b_dec;
            if !off.errors.contains(&(l, p)) {
                y += &layer.offsets[p];
            }
            for q in 0..=p {
                y += &layer.mixing[p][q] * &x[q];
            }
            next.push(y);
            pre_l.push(pre);
        }
        preacts.push(pre_l);
        x = next;
    }
    Replay {
        preacts,
        logits: &model.unembedding * &x[n - 1],
    }
}

/// Contribution of `source` to each logit read off the graph: the sum over
/// paths of the first edge weight times, for every feature passed through,
/// the next edge weight per unit of that feature's activation.
pub fn graph_contribution(g: &AttributionGraph, source: u64) -> BTreeMap<u32, f64> {
    fn per_unit(g: &AttributionGraph, v: u64, memo: &mut BTreeMap<u64, BTreeMap<u32, f64>>) -> BTreeMap<u32, f64> {
        if let Some(r) = memo.get(&v) {
            return r.clone();
        }
        let node = g.node(v).unwrap();
        let mut out = BTreeMap::new();
        if node.kind == NodeKind::Logit {
            out.insert(node.token_id.unwrap(), 1.0);
        } else {
            let a = node.activation.unwrap();
            for e in g.edges().iter().filter(|e| e.src == v) {
                for (t, x) in per_unit(g, e.dst, memo) {
                    *out.entry(t).or_insert(0.0) += e.weight / a * x;
                }
            }
        }
        memo.insert(v, out.clone());
        out
    }
    let mut memo = BTreeMap::new();
    let mut out = BTreeMap::new();
    for e in g.edges().iter().filter(|e| e.src == source) {
        for (t, x) in per_unit(g, e.dst, &mut memo) {
            *out.entry(t).or_insert(0.0) += e.weight * x;
        }
    }
    out
}
