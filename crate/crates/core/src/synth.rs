//! Labeled synthetic corpora of attribution graphs.
//!
//! Each class has its own pathology knobs: error-to-feature outflow ratio,
//! edge probability, number of disconnected sub-circuits and hub strength.
//! `separation` pulls both classes toward their common mean; at 0 the two
//! classes are drawn from one distribution. Token traces are independent of
//! the class.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    serialize_graph, write_manifest, AttributionGraph, Edge, Label, Node, StepRecord, TokenTrace,
    TracedLogit,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassKnobs {
    /// Target ratio of error-node outflow to feature-node outflow.
    pub error_ratio: f64,
    /// Probability of each admissible extra edge.
    pub density: f64,
    /// Number of disconnected sub-circuits, each with its own logit.
    pub components: usize,
    /// Probability of routing an edge through the hub feature.
    pub hub: f64,
}

impl Default for ClassKnobs {
    fn default() -> Self {
        ClassKnobs {
            error_ratio: 0.1,
            density: 0.15,
            components: 1,
            hub: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_steps: usize,
    pub num_layers: u32,
    /// Inclusive range of feature nodes per graph.
    pub min_features: usize,
    pub max_features: usize,
    /// Share of steps labeled incorrect.
    pub incorrect_rate: f64,
    pub correct: ClassKnobs,
    pub incorrect: ClassKnobs,
    /// In `[0, 1]`; 0 makes the classes identically distributed.
    pub separation: f64,
    /// Lines per task.
    pub steps_per_task: usize,
    pub language: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_steps: 2000,
            num_layers: 4,
            min_features: 10,
            max_features: 30,
            incorrect_rate: 0.3,
            correct: ClassKnobs::default(),
            incorrect: ClassKnobs {
                error_ratio: 0.5,
                density: 0.3,
                components: 2,
                hub: 0.5,
            },
            separation: 0.9,
            steps_per_task: 5,
            language: "synthetic".into(),
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_steps == 0 || self.num_layers == 0 || self.steps_per_task == 0 {
            return bad("num_steps, num_layers and steps_per_task must be >= 1".into());
        }
        if self.min_features == 0 || self.min_features > self.max_features {
            return bad("feature range must satisfy 1 <= min <= max".into());
        }
        if !(0.0..=1.0).contains(&self.incorrect_rate) || !(0.0..=1.0).contains(&self.separation) {
            return bad("incorrect_rate and separation must lie in [0, 1]".into());
        }
        for (name, k) in [("correct", &self.correct), ("incorrect", &self.incorrect)] {
            let infeasible = |m: String| Err(Error::InfeasibleKnob(format!("{name}: {m}")));
            if !(k.error_ratio >= 0.0 && k.error_ratio.is_finite()) {
                return infeasible("error_ratio must be >= 0".into());
            }
            if !(k.density > 0.0 && k.density <= 1.0) {
                return infeasible(format!("density {} outside (0, 1]", k.density));
            }
            if !(0.0..=1.0).contains(&k.hub) {
                return infeasible(format!("hub {} outside [0, 1]", k.hub));
            }
            if k.components == 0 || k.components > self.min_features {
                return infeasible(format!(
                    "{} components with as few as {} features",
                    k.components, self.min_features
                ));
            }
            if k.density >= 1.0 && k.components > 1 {
                return infeasible("density 1.0 cannot coexist with several components".into());
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<SynthConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Knobs actually used for a class after applying `separation`.
    pub fn effective_knobs(&self, label: Label) -> ClassKnobs {
        let own = match label {
            Label::Correct => &self.correct,
            Label::Incorrect => &self.incorrect,
        };
        let s = self.separation;
        let mix = |a: f64, b: f64, own: f64| {
            let mean = (a + b) / 2.0;
            mean + s * (own - mean)
        };
        let (c, i) = (&self.correct, &self.incorrect);
        ClassKnobs {
            error_ratio: mix(c.error_ratio, i.error_ratio, own.error_ratio),
            density: mix(c.density, i.density, own.density),
            components: mix(c.components as f64, i.components as f64, own.components as f64)
                .round()
                .max(1.0) as usize,
            hub: mix(c.hub, i.hub, own.hub),
        }
    }
}

/// A generated corpus held in memory; `graphs[i]` belongs to `records[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub records: Vec<StepRecord>,
    pub graphs: Vec<AttributionGraph>,
}

pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let steps: Vec<(StepRecord, AttributionGraph)> = (0..cfg.num_steps)
        .into_par_iter()
        .map(|i| generate_step(cfg, i))
        .collect();
    let (records, graphs) = steps.into_iter().unzip();
    Ok(SynthCorpus { records, graphs })
}

impl SynthCorpus {
    /// Writes `manifest.jsonl` and `graphs/*.jsonl` under `dir`, returning
    /// the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let graphs_dir = dir.join("graphs");
        std::fs::create_dir_all(&graphs_dir).map_err(|e| Error::io(&graphs_dir, e))?;
        self.records
            .par_iter()
            .zip(&self.graphs)
            .try_for_each(|(r, g)| {
                let path = dir.join(&r.graph_path);
                std::fs::write(&path, serialize_graph(g)).map_err(|e| Error::io(&path, e))
            })?;
        let manifest = dir.join("manifest.jsonl");
        std::fs::write(&manifest, write_manifest(&self.records))
            .map_err(|e| Error::io(&manifest, e))?;
        Ok(manifest)
    }
}

fn signed_weight(rng: &mut ChaCha8Rng) -> f64 {
    let w = rng.random_range(0.2..1.0);
    if rng.random_bool(0.2) {
        -w
    } else {
        w
    }
}

fn generate_step(cfg: &SynthConfig, step: usize) -> (StepRecord, AttributionGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(step as u64);
    let label = if rng.random_bool(cfg.incorrect_rate) {
        Label::Incorrect
    } else {
        Label::Correct
    };
    let knobs = cfg.effective_knobs(label);
    let graph = generate_graph(cfg, &knobs, &mut rng);
    let trace = synthetic_trace(&mut rng);

    let task = step / cfg.steps_per_task;
    let step_index = (step % cfg.steps_per_task) as u32;
    // the line count is a property of the task, so derive it from the task alone
    let mut task_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a5c);
    task_rng.set_stream(task as u64);
    let total_lines = task_rng.random_range(cfg.steps_per_task as u32..=40.max(cfg.steps_per_task as u32));
    let task_id = format!("task{task:05}");
    let record = StepRecord {
        graph_path: PathBuf::from(format!("graphs/{task_id}_{step_index:03}.jsonl")),
        task_id,
        step_index,
        language: cfg.language.clone(),
        label: Some(label),
        total_lines,
        trace: Some(trace),
        source_line: None,
    };
    (record, graph)
}

fn synthetic_trace(rng: &mut ChaCha8Rng) -> TokenTrace {
    let len = rng.random_range(1..=6);
    let logits: Vec<Vec<f64>> = (0..len)
        .map(|_| (0..16).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let chosen: Vec<usize> = (0..len).map(|_| rng.random_range(0..16)).collect();
    TokenTrace::from_logits(&logits, &chosen).expect("well-formed synthetic logits")
}

fn generate_graph(cfg: &SynthConfig, knobs: &ClassKnobs, rng: &mut ChaCha8Rng) -> AttributionGraph {
    let layers = cfg.num_layers;
    let k = knobs.components;
    let n_feat = rng.random_range(cfg.min_features..=cfg.max_features);
    let positions = k as u32 + rng.random_range(0..=2);
    let last = positions - 1;

    let mut nodes = Vec::new();
    let mut next = 0u64;
    let mut fresh = || {
        next += 1;
        next - 1
    };
    // per component: token id, logit id, features as (id, layer)
    let mut groups: Vec<(u64, u64, Vec<(u64, i32)>)> = Vec::with_capacity(k);
    for c in 0..k {
        let tok = fresh();
        nodes.push(Node::token(tok, c as u32, rng.random_range(0..1000)));
        let logit = fresh();
        nodes.push(Node::logit(logit, layers, last, c as u32));
        groups.push((tok, logit, Vec::new()));
    }
    for f in 0..n_feat {
        // every component gets at least one feature
        let c = if f < k { f } else { rng.random_range(0..k) };
        let id = fresh();
        let layer = rng.random_range(0..layers) as i32;
        let pos = rng.random_range(0..positions);
        let act = rng.random_range(0.1..5.0);
        nodes.push(Node::feature(id, layer, pos, rng.random_range(0..4096), act));
        groups[c].2.push((id, layer));
    }

    let mut edges: Vec<Edge> = Vec::new();
    let mut have: BTreeSet<(u64, u64)> = BTreeSet::new();
    let mut add = |edges: &mut Vec<Edge>, s: u64, d: u64, w: f64| {
        if have.insert((s, d)) {
            edges.push(Edge::new(s, d, w));
        }
    };
    for (tok, logit, feats) in &groups {
        for &(id, layer) in feats {
            // backbone: one parent from below, one child above
            let parents: Vec<u64> = std::iter::once(*tok)
                .chain(feats.iter().filter(|f| f.1 < layer).map(|f| f.0))
                .collect();
            let children: Vec<u64> = std::iter::once(*logit)
                .chain(feats.iter().filter(|f| f.1 > layer).map(|f| f.0))
                .collect();
            let p = parents[rng.random_range(0..parents.len())];
            let w = signed_weight(rng);
            add(&mut edges, p, id, w);
            let ch = children[rng.random_range(0..children.len())];
            let w = signed_weight(rng);
            add(&mut edges, id, ch, w);
            for &s in &parents {
                if rng.random_bool(knobs.density) {
                    let w = signed_weight(rng);
                    add(&mut edges, s, id, w);
                }
            }
            if rng.random_bool(knobs.density) {
                let w = signed_weight(rng);
                add(&mut edges, id, *logit, w);
            }
        }
        // hub: a middle-layer feature that collects from below and feeds above
        let mid = (layers as i32 - 1) / 2;
        if let Some(&(hub, hl)) = feats.iter().min_by_key(|f| ((f.1 - mid).abs(), f.0)) {
            for &(id, layer) in feats {
                if layer < hl && rng.random_bool(knobs.hub) {
                    let w = signed_weight(rng);
                    add(&mut edges, id, hub, w);
                }
                if layer > hl && rng.random_bool(knobs.hub) {
                    let w = signed_weight(rng);
                    add(&mut edges, hub, id, w);
                }
            }
        }
    }

    // error nodes: outflow scaled to error_ratio times the feature outflow
    let feature_ids: BTreeSet<u64> = groups.iter().flat_map(|g| g.2.iter().map(|f| f.0)).collect();
    let feature_outflow: f64 = edges
        .iter()
        .filter(|e| feature_ids.contains(&e.src))
        .map(|e| e.weight.abs())
        .sum();
    if knobs.error_ratio > 0.0 && layers > 1 {
        let mut slots: BTreeSet<(i32, u32)> = BTreeSet::new();
        let mut raw: Vec<Edge> = Vec::new();
        for (_, _, feats) in &groups {
            for _ in 0..feats.len().div_ceil(3) {
                let l = rng.random_range(0..layers - 1) as i32;
                let targets: Vec<u64> = feats.iter().filter(|f| f.1 > l).map(|f| f.0).collect();
                let p = rng.random_range(0..positions);
                if targets.is_empty() || !slots.insert((l, p)) {
                    continue;
                }
                let id = fresh();
                nodes.push(Node::error(id, l, p));
                for &t in &targets {
                    if rng.random_bool(0.5) || t == targets[0] {
                        raw.push(Edge::new(id, t, signed_weight(rng)));
                    }
                }
            }
        }
        let raw_total: f64 = raw.iter().map(|e| e.weight.abs()).sum();
        if raw_total > 0.0 {
            let scale = knobs.error_ratio * feature_outflow / raw_total;
            edges.extend(raw.into_iter().map(|e| Edge::new(e.src, e.dst, e.weight * scale)));
        }
    }

    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let mass = rng.random_range(0.6..0.95);
    let sum: f64 = raw.iter().sum();
    let traced = raw
        .iter()
        .enumerate()
        .map(|(c, u)| TracedLogit {
            token_id: c as u32,
            probability: mass * u / sum,
        })
        .collect();
    let total_active = n_feat as u64 + rng.random_range(0..=3 * n_feat as u64);
    AttributionGraph::new(layers, total_active, nodes, edges, traced)
}
