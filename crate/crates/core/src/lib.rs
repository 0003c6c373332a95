//! Line-level code-correctness diagnosis from attribution graphs.
//!
//! The crate covers the whole offline pipeline: a canonical interchange
//! format for attribution graphs ([`graph`]), influence pruning ([`prune`]),
//! structural feature extraction and projection ([`features`]), black-box
//! confidence baselines ([`baselines`]), a boosted-tree classifier
//! ([`gbdt`]), ranking metrics and experiment harnesses ([`eval`]), an
//! exactly analyzable toy replacement model for causal checks
//! ([`sandbox`]), a synthetic corpus generator ([`synth`]) and the
//! end-to-end orchestration used by the command line ([`pipeline`]).

pub mod baselines;
pub mod error;
pub mod eval;
pub mod features;
pub mod gbdt;
pub mod graph;
pub mod pipeline;
pub mod prune;
pub mod sandbox;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{AttributionGraph, Corpus, Edge, Label, Node, NodeKind, StepRecord, TokenTrace};
pub use features::{extract_features, feature_manifest, FeatureVector};
pub use prune::{compute_influence, prune_graph, PrunedGraph, PrunerConfig};
