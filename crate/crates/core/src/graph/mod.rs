//! Attribution-graph data model.
//!
//! A graph decomposes one forward pass into token, feature, error and logit
//! nodes joined by signed linear-contribution edges. Graphs are immutable
//! values; [`AttributionGraph::new`] puts nodes, edges and traced logits into
//! canonical order so that equality, serialization and every downstream
//! statistic are independent of insertion order.

mod format;
mod manifest;
mod validate;

use serde::{Deserialize, Serialize};

pub use format::{parse_graph, read_graph, serialize_graph, write_graph};
pub use manifest::{
    load_manifest, parse_manifest, write_manifest, Corpus, Label, StepRecord, TemperatureStats,
    TokenTrace, TEMPERATURE_GRID,
};
pub use validate::{validate_graph, Violation, ViolationKind};

/// Version written into every graph document.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Feature,
    Error,
    Token,
    Logit,
}

impl NodeKind {
    /// Rank inside one layer: tokens and error terms feed features, which feed logits.
    pub(crate) fn order_rank(self) -> u8 {
        match self {
            NodeKind::Token | NodeKind::Error => 0,
            NodeKind::Feature => 1,
            NodeKind::Logit => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: u64,
    pub kind: NodeKind,
    /// `-1` for tokens, `num_layers` for logits.
    pub layer: i32,
    pub position: u32,
    pub feature_index: Option<u32>,
    pub activation: Option<f64>,
    pub token_id: Option<u32>,
}

impl Node {
    pub fn token(id: u64, position: u32, token_id: u32) -> Self {
        Node {
            id,
            kind: NodeKind::Token,
            layer: -1,
            position,
            feature_index: None,
            activation: None,
            token_id: Some(token_id),
        }
    }

    pub fn feature(id: u64, layer: i32, position: u32, feature_index: u32, activation: f64) -> Self {
        Node {
            id,
            kind: NodeKind::Feature,
            layer,
            position,
            feature_index: Some(feature_index),
            activation: Some(activation),
            token_id: None,
        }
    }

    pub fn error(id: u64, layer: i32, position: u32) -> Self {
        Node {
            id,
            kind: NodeKind::Error,
            layer,
            position,
            feature_index: None,
            activation: None,
            token_id: None,
        }
    }

    pub fn logit(id: u64, num_layers: u32, position: u32, token_id: u32) -> Self {
        Node {
            id,
            kind: NodeKind::Logit,
            layer: num_layers as i32,
            position,
            feature_index: None,
            activation: None,
            token_id: Some(token_id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: u64,
    pub dst: u64,
    pub weight: f64,
}

impl Edge {
    pub fn new(src: u64, dst: u64, weight: f64) -> Self {
        Edge { src, dst, weight }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracedLogit {
    pub token_id: u32,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionGraph {
    schema_version: u32,
    num_layers: u32,
    total_active_features: u64,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    traced_logits: Vec<TracedLogit>,
}

impl AttributionGraph {
    /// Builds a graph in canonical order. No invariants are checked here; see
    /// [`validate_graph`].
    pub fn new(
        num_layers: u32,
        total_active_features: u64,
        nodes: Vec<Node>,
        edges: Vec<Edge>,
        traced_logits: Vec<TracedLogit>,
    ) -> Self {
        Self::with_schema_version(
            SCHEMA_VERSION,
            num_layers,
            total_active_features,
            nodes,
            edges,
            traced_logits,
        )
    }

    pub(crate) fn with_schema_version(
        schema_version: u32,
        num_layers: u32,
        total_active_features: u64,
        mut nodes: Vec<Node>,
        mut edges: Vec<Edge>,
        mut traced_logits: Vec<TracedLogit>,
    ) -> Self {
        nodes.sort_by_key(|n| n.id);
        edges.sort_by(|a, b| (a.src, a.dst).cmp(&(b.src, b.dst)));
        traced_logits.sort_by(|a, b| {
            b.probability
                .total_cmp(&a.probability)
                .then(a.token_id.cmp(&b.token_id))
        });
        AttributionGraph {
            schema_version,
            num_layers,
            total_active_features,
            nodes,
            edges,
            traced_logits,
        }
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn num_layers(&self) -> u32 {
        self.num_layers
    }

    pub fn total_active_features(&self) -> u64 {
        self.total_active_features
    }

    /// Nodes sorted by id.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Edges sorted by `(src, dst)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Traced logits by descending probability.
    pub fn traced_logits(&self) -> &[TracedLogit] {
        &self.traced_logits
    }

    /// Index of a node id in [`nodes`](Self::nodes).
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok()
    }

    pub fn node(&self, id: u64) -> Option<&Node> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub fn traced_probability(&self, token_id: u32) -> Option<f64> {
        self.traced_logits
            .iter()
            .find(|l| l.token_id == token_id)
            .map(|l| l.probability)
    }

    /// Subgraph on the given node ids, keeping only edges whose endpoints
    /// both survive and for which `keep_edge` holds.
    pub fn induced_subgraph(
        &self,
        keep_node: impl Fn(&Node) -> bool,
        keep_edge: impl Fn(&Edge) -> bool,
    ) -> AttributionGraph {
        let nodes: Vec<Node> = self.nodes.iter().filter(|n| keep_node(n)).cloned().collect();
        let kept = |id: u64| nodes.binary_search_by_key(&id, |n| n.id).is_ok();
        let edges = self
            .edges
            .iter()
            .filter(|e| kept(e.src) && kept(e.dst) && keep_edge(e))
            .copied()
            .collect();
        AttributionGraph {
            schema_version: self.schema_version,
            num_layers: self.num_layers,
            total_active_features: self.total_active_features,
            nodes,
            edges,
            traced_logits: self.traced_logits.clone(),
        }
    }

    /// Adjacency lists over node indices: `(successors, predecessors)`, each
    /// entry carrying `(neighbor index, edge index)`. Dangling edges are skipped.
    pub fn adjacency(&self) -> (Vec<Vec<(usize, usize)>>, Vec<Vec<(usize, usize)>>) {
        let n = self.nodes.len();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        for (ei, e) in self.edges.iter().enumerate() {
            if let (Some(s), Some(d)) = (self.index_of(e.src), self.index_of(e.dst)) {
                succ[s].push((d, ei));
                pred[d].push((s, ei));
            }
        }
        (succ, pred)
    }

    /// Node indices in topological order (Kahn, smallest id first), or the id
    /// of a node on a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>, u64> {
        let (succ, pred) = self.adjacency();
        let mut indegree: Vec<usize> = pred.iter().map(Vec::len).collect();
        let mut ready: std::collections::BTreeSet<usize> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| i)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &(j, _) in &succ[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        if order.len() == self.nodes.len() {
            Ok(order)
        } else {
            let stuck = indegree
                .iter()
                .position(|&d| d > 0)
                .expect("unfinished sort leaves a node with positive indegree");
            Err(self.nodes[stuck].id)
        }
    }
}
