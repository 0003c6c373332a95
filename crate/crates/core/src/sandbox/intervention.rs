use serde::{Deserialize, Serialize};

use super::{forward, forward_with, total_effects, trace_attributions, ToyModel};
use crate::error::{Error, Result};
use crate::graph::NodeKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionMode {
    /// Clamp to zero.
    Suppress,
    /// Multiply the current value.
    Amplify(f64),
    SetTo(f64),
}

impl InterventionMode {
    fn apply(self, value: f64) -> f64 {
        match self {
            InterventionMode::Suppress => 0.0,
            InterventionMode::Amplify(k) => k * value,
            InterventionMode::SetTo(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    /// `(layer, position, feature_index)` triples.
    pub targets: Vec<(usize, usize, usize)>,
    pub mode: InterventionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitDelta {
    pub token_id: u32,
    pub original: f64,
    pub updated: f64,
    pub actual_delta: f64,
    /// Change predicted by propagating the clamp through the attribution
    /// graph with gates frozen.
    pub predicted_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    /// Last-position logits before and after, over the whole vocabulary.
    pub original_logits: Vec<f64>,
    pub updated_logits: Vec<f64>,
    /// One entry per traced logit, most probable first.
    pub traced: Vec<LogitDelta>,
    /// Non-target features whose gate changed state.
    pub gate_flips: usize,
    /// Targets that were inactive and so have no graph node to predict from.
    pub unpredicted_targets: usize,
}

impl InterventionReport {
    pub fn max_prediction_error(&self) -> f64 {
        self.traced
            .iter()
            .map(|d| (d.actual_delta - d.predicted_delta).abs())
            .fold(0.0, f64::max)
    }
}

/// Re-runs the free forward pass with the target features clamped after
/// their nonlinearity, and compares the outcome with the linear prediction
/// read off the attribution graph.
pub fn apply_intervention(
    model: &ToyModel,
    tokens: &[u32],
    iv: &Intervention,
    top_k_logits: usize,
) -> Result<InterventionReport> {
    model.check_input(tokens)?;
    for &(layer, position, feature) in &iv.targets {
        if layer >= model.layers.len()
            || position >= tokens.len()
            || feature >= model.config.num_features
        {
            return Err(Error::TargetNotFound {
                layer,
                position,
                feature,
            });
        }
    }
    let before = forward(model, tokens)?;
    let after = forward_with(model, tokens, |l, p, f| {
        for &(tl, tp, tf) in &iv.targets {
            if tl == l && tp == p {
                f[tf] = iv.mode.apply(f[tf]);
            }
        }
    })?;

    let is_target = |l: usize, p: usize, f: usize| iv.targets.contains(&(l, p, f));
    let mut gate_flips = 0;
    for l in 0..before.gates.len() {
        for p in 0..tokens.len() {
            for (f, (a, b)) in before.gates[l][p].iter().zip(&after.gates[l][p]).enumerate() {
                if a != b && !is_target(l, p, f) {
                    gate_flips += 1;
                }
            }
        }
    }

    let graph = trace_attributions(model, tokens, top_k_logits)?;
    let mut clamped = Vec::new();
    let mut unpredicted_targets = 0;
    let mut shifts = Vec::new();
    for &(l, p, f) in &iv.targets {
        let node = graph.nodes().iter().find(|n| {
            n.kind == NodeKind::Feature
                && n.layer == l as i32
                && n.position == p as u32
                && n.feature_index == Some(f as u32)
        });
        let a = before.acts[l][p][f];
        let shift = iv.mode.apply(a) - a;
        match node {
            Some(n) => {
                clamped.push(n.id);
                shifts.push((n.id, shift));
            }
            None if shift != 0.0 => unpredicted_targets += 1,
            None => {}
        }
    }
    let effects = total_effects(&graph, &clamped);

    let original = before.last_logits();
    let updated = after.last_logits();
    let traced = graph
        .traced_logits()
        .iter()
        .map(|tl| {
            let t = tl.token_id as usize;
            let predicted_delta = shifts
                .iter()
                .map(|(id, s)| s * effects[id][&tl.token_id])
                .sum();
            LogitDelta {
                token_id: tl.token_id,
                original: original[t],
                updated: updated[t],
                actual_delta: updated[t] - original[t],
                predicted_delta,
            }
        })
        .collect();
    Ok(InterventionReport {
        original_logits: original.iter().copied().collect(),
        updated_logits: updated.iter().copied().collect(),
        traced,
        gate_flips,
        unpredicted_targets,
    })
}
