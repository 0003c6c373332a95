use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{AttributionGraph, NodeKind};

/// Tolerance on the traced probability mass; sums of exact probabilities
/// can land a few ulps above 1.
const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    InvalidNumLayers,
    DuplicateNodeId,
    ActivationPresence,
    NonPositiveActivation,
    FeatureIndexPresence,
    TokenIdPresence,
    LayerOutOfRange,
    DuplicateErrorNode,
    DanglingEdge,
    SelfLoop,
    DuplicateEdge,
    InvalidWeight,
    OrderViolation,
    Cycle,
    ProbabilityOutOfRange,
    ProbabilityMassExceedsOne,
    DuplicateTracedLogit,
    NoLogitNode,
    UntracedLogit,
    ActiveFeatureCount,
}

/// One broken invariant together with the ids it concerns.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub ids: Vec<u64>,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, ids: Vec<u64>, message: impl Into<String>) -> Self {
        Violation {
            kind,
            ids,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)?;
        if !self.ids.is_empty() {
            write!(f, " (ids {:?})", self.ids)?;
        }
        Ok(())
    }
}

/// Checks every graph invariant. An empty result means the graph is valid.
pub fn validate_graph(g: &AttributionGraph) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = Vec::new();
    let num_layers = g.num_layers() as i32;

    if g.num_layers() < 1 {
        out.push(Violation::new(InvalidNumLayers, vec![], "num_layers must be >= 1"));
    }

    let mut seen = BTreeSet::new();
    let mut error_slots: BTreeMap<(i32, u32), u64> = BTreeMap::new();
    for n in g.nodes() {
        if !seen.insert(n.id) {
            out.push(Violation::new(DuplicateNodeId, vec![n.id], "duplicate node id"));
        }
        let is_feature = n.kind == NodeKind::Feature;
        match n.activation {
            Some(a) if is_feature => {
                if !(a > 0.0 && a.is_finite()) {
                    out.push(Violation::new(
                        NonPositiveActivation,
                        vec![n.id],
                        "activation must be > 0",
                    ));
                }
            }
            None if is_feature => out.push(Violation::new(
                ActivationPresence,
                vec![n.id],
                "feature node is missing its activation",
            )),
            Some(_) => out.push(Violation::new(
                ActivationPresence,
                vec![n.id],
                "only feature nodes carry an activation",
            )),
            None => {}
        }
        if n.feature_index.is_some() != is_feature {
            out.push(Violation::new(
                FeatureIndexPresence,
                vec![n.id],
                "feature_index must be present exactly on feature nodes",
            ));
        }
        let wants_token = matches!(n.kind, NodeKind::Token | NodeKind::Logit);
        if n.token_id.is_some() != wants_token {
            out.push(Violation::new(
                TokenIdPresence,
                vec![n.id],
                "token_id must be present exactly on token and logit nodes",
            ));
        }
        let layer_ok = match n.kind {
            NodeKind::Feature | NodeKind::Error => (0..num_layers).contains(&n.layer),
            NodeKind::Token => n.layer == -1,
            NodeKind::Logit => n.layer == num_layers,
        };
        if !layer_ok {
            out.push(Violation::new(
                LayerOutOfRange,
                vec![n.id],
                format!("layer {} is invalid for a {:?} node", n.layer, n.kind),
            ));
        }
        if n.kind == NodeKind::Error {
            if let Some(&first) = error_slots.get(&(n.layer, n.position)) {
                out.push(Violation::new(
                    DuplicateErrorNode,
                    vec![first, n.id],
                    format!(
                        "more than one error node at (layer {}, position {})",
                        n.layer, n.position
                    ),
                ));
            } else {
                error_slots.insert((n.layer, n.position), n.id);
            }
        }
    }

    let mut pairs = BTreeSet::new();
    let mut structurally_sound = true;
    for e in g.edges() {
        let ids = vec![e.src, e.dst];
        if !pairs.insert((e.src, e.dst)) {
            out.push(Violation::new(DuplicateEdge, ids.clone(), "duplicate edge"));
        }
        if !e.weight.is_finite() || e.weight == 0.0 {
            out.push(Violation::new(
                InvalidWeight,
                ids.clone(),
                "edge weight must be finite and nonzero",
            ));
        }
        if e.src == e.dst {
            structurally_sound = false;
            out.push(Violation::new(SelfLoop, ids, "self-loop"));
            continue;
        }
        let (Some(s), Some(d)) = (g.node(e.src), g.node(e.dst)) else {
            structurally_sound = false;
            out.push(Violation::new(
                DanglingEdge,
                ids,
                "edge endpoint does not resolve to a node",
            ));
            continue;
        };
        let ordered = s.layer < d.layer
            || (s.layer == d.layer
                && s.position <= d.position
                && s.kind.order_rank() < d.kind.order_rank());
        if !ordered {
            out.push(Violation::new(
                OrderViolation,
                ids,
                "edge runs against computational order",
            ));
        }
    }

    if structurally_sound {
        if let Err(id) = g.topological_order() {
            out.push(Violation::new(Cycle, vec![id], "graph contains a cycle"));
        }
    }

    let mut mass = 0.0;
    let mut traced = BTreeSet::new();
    for l in g.traced_logits() {
        if !(l.probability > 0.0 && l.probability <= 1.0) {
            out.push(Violation::new(
                ProbabilityOutOfRange,
                vec![u64::from(l.token_id)],
                "traced probability must lie in (0, 1]",
            ));
        }
        if !traced.insert(l.token_id) {
            out.push(Violation::new(
                DuplicateTracedLogit,
                vec![u64::from(l.token_id)],
                "token traced twice",
            ));
        }
        mass += l.probability;
    }
    if mass > 1.0 + MASS_TOLERANCE {
        out.push(Violation::new(
            ProbabilityMassExceedsOne,
            vec![],
            format!("probability mass exceeds 1 ({mass})"),
        ));
    }

    let mut has_logit = false;
    for n in g.nodes().iter().filter(|n| n.kind == NodeKind::Logit) {
        has_logit = true;
        if let Some(t) = n.token_id {
            if !traced.contains(&t) {
                out.push(Violation::new(
                    UntracedLogit,
                    vec![n.id],
                    format!("logit node token {t} missing from traced_logits"),
                ));
            }
        }
    }
    if !has_logit {
        out.push(Violation::new(NoLogitNode, vec![], "graph has no logit node"));
    }

    let features = g.count_kind(NodeKind::Feature) as u64;
    if g.total_active_features() < features {
        out.push(Violation::new(
            ActiveFeatureCount,
            vec![],
            format!(
                "total_active_features {} is below the {} feature nodes present",
                g.total_active_features(),
                features
            ),
        ));
    }

    out
}
