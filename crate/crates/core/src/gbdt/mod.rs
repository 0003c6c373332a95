//! Newton-boosted regression trees for correctness probabilities.
//!
//! The model predicts `P(line is correct)` as
//! `sigmoid(prior_logit + learning_rate * sum(tree leaves))`. Each round fits
//! one exact-split tree to the gradient `y - p` and hessian `p (1 - p)` of
//! the binary cross-entropy. A round whose tree would raise the training
//! loss has its leaves halved until it no longer does, so the loss sequence
//! is non-increasing by construction.

mod tree;

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTable, FeatureVector};
use crate::graph::Label;

pub use tree::{Tree, TreeNode};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Halvings tried before a round's tree is discarded.
const MAX_BACKTRACK: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub num_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            num_rounds: 300,
            learning_rate: 0.05,
            max_depth: 6,
            min_samples_leaf: 20,
            subsample: 1.0,
            seed: 42,
            lambda: 1.0,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.num_rounds < 1 {
            return bad("num_rounds must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtModel {
    pub format_version: u32,
    pub config: GbdtConfig,
    pub manifest: Vec<String>,
    pub prior_logit: f64,
    pub trees: Vec<Tree>,
    /// Total split gain per manifest entry.
    pub importances: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean binary cross-entropy of margins `f` against 0/1 targets.
fn log_loss(f: &[f64], y: &[f64]) -> f64 {
    f.iter().zip(y).map(|(&f, &y)| softplus(f) - y * f).sum::<f64>() / f.len() as f64
}

impl GbdtModel {
    /// Model without trees; every prediction is `sigmoid(prior_logit)`.
    pub fn constant(manifest: Vec<String>, prior_logit: f64, config: GbdtConfig) -> Self {
        let importances = vec![0.0; manifest.len()];
        GbdtModel {
            format_version: MODEL_FORMAT_VERSION,
            config,
            manifest,
            prior_logit,
            trees: Vec::new(),
            importances,
        }
    }

    /// Raw logit for one row; the row width is not checked.
    pub fn margin(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        self.prior_logit + self.config.learning_rate * sum
    }

    /// Correctness probability, kept strictly inside `(0, 1)`.
    pub fn probability(&self, row: &[f64]) -> f64 {
        sigmoid(self.margin(row)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
    }

    pub fn predict_proba(&self, x: &FeatureVector) -> Result<f64> {
        if x.manifest != self.manifest {
            return Err(Error::ManifestMismatch(
                "feature vector names differ from the model's".into(),
            ));
        }
        Ok(self.probability(&x.values))
    }

    /// Incorrectness scores (negated margins) for every row of a table.
    pub fn score_table(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        if table.manifest != self.manifest {
            return Err(Error::ManifestMismatch(
                "feature table columns differ from the model's".into(),
            ));
        }
        Ok(table.values.iter().map(|r| -self.margin(r)).collect())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<GbdtModel> {
        let m: GbdtModel = serde_json::from_str(text).map_err(|e| Error::Schema {
            line: e.line(),
            message: e.to_string(),
        })?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema {
                line: 1,
                message: format!("unsupported model format {}", m.format_version),
            });
        }
        if m.importances.len() != m.manifest.len()
            || m.trees.iter().any(|t| t.max_feature().is_some_and(|f| f >= m.manifest.len()))
        {
            return Err(Error::Schema {
                line: 1,
                message: "split feature or importance vector outside the manifest".into(),
            });
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<GbdtModel> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_owned()),
            _ => Error::io(path, e),
        })?;
        Self::from_json(&text)
    }
}

/// Features ranked by total split gain, highest first (ties by manifest order).
pub fn feature_importances(m: &GbdtModel) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = m
        .manifest
        .iter()
        .cloned()
        .zip(m.importances.iter().copied())
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked
}

pub fn train_gbdt(
    x: &[Vec<f64>],
    y: &[Label],
    manifest: Vec<String>,
    cfg: &GbdtConfig,
) -> Result<GbdtModel> {
    train_gbdt_with_loss(x, y, manifest, cfg).map(|(m, _)| m)
}

/// Trains and also returns the training loss before the first round and
/// after every round (`num_rounds + 1` values).
pub fn train_gbdt_with_loss(
    x: &[Vec<f64>],
    y: &[Label],
    manifest: Vec<String>,
    cfg: &GbdtConfig,
) -> Result<(GbdtModel, Vec<f64>)> {
    cfg.validate()?;
    let n = x.len();
    if n != y.len() {
        return Err(Error::ShapeMismatch(format!("{n} rows but {} labels", y.len())));
    }
    if n < 2 {
        return Err(Error::ShapeMismatch(format!("need at least 2 rows, got {n}")));
    }
    let width = manifest.len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "row {i} has {} values, manifest has {width}",
                row.len()
            )));
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, column: c });
        }
    }
    let target: Vec<f64> = y.iter().map(|&l| l.as_u8() as f64).collect();
    let positives = target.iter().filter(|&&t| t == 1.0).count();
    if positives == 0 || positives == n {
        return Err(Error::SingleClass(format!("all {n} labels equal")));
    }
    let base_rate = positives as f64 / n as f64;
    let prior_logit = (base_rate / (1.0 - base_rate)).ln();
    let mut model = GbdtModel::constant(manifest, prior_logit, cfg.clone());
    if width == 0 {
        let loss = log_loss(&vec![prior_logit; n], &target);
        return Ok((model, vec![loss; cfg.num_rounds + 1]));
    }

    let columns: Vec<Vec<f64>> = (0..width).map(|f| x.iter().map(|r| r[f]).collect()).collect();
    let presorted: Vec<Vec<usize>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let params = tree::FitParams {
        max_depth: cfg.max_depth,
        min_samples_leaf: cfg.min_samples_leaf,
        lambda: cfg.lambda,
    };
    let take = ((cfg.subsample * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut margin = vec![prior_logit; n];
    let mut loss = log_loss(&margin, &target);
    let mut history = vec![loss];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..cfg.num_rounds {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            grad[i] = target[i] - p;
            hess[i] = p * (1.0 - p);
        }
        let sorted = if take == n {
            presorted.clone()
        } else {
            let mut member = vec![false; n];
            for i in sample(&mut rng, n, take) {
                member[i] = true;
            }
            presorted
                .iter()
                .map(|o| o.iter().copied().filter(|&i| member[i]).collect())
                .collect()
        };
        let mut t = tree::fit_tree(&columns, sorted, &grad, &hess, &params);

        let mut step: Vec<f64> = x.iter().map(|r| t.predict(r)).collect();
        let mut accepted = false;
        for _ in 0..=MAX_BACKTRACK {
            let trial: Vec<f64> = margin
                .iter()
                .zip(&step)
                .map(|(m, s)| m + cfg.learning_rate * s)
                .collect();
            let trial_loss = log_loss(&trial, &target);
            if trial_loss <= loss {
                margin = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            t.scale_leaves(0.5);
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
        if accepted {
            for (f, gain) in t.splits() {
                model.importances[f] += gain;
            }
            model.trees.push(t);
        }
        history.push(loss);
    }
    Ok((model, history))
}
