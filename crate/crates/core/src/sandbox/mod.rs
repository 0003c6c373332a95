//! A tiny replacement model whose attribution graph is exact.
//!
//! Each layer adds to the residual stream a frozen causal mixing of earlier
//! positions, a sparse transcoder output and an optional fixed offset that
//! plays the role of the reconstruction error:
//!
//! ```text
//! x[l+1][p] = x[l][p] + sum_{q<=p} A[l][p][q] x[l][q]
//!           + W_dec[l] f[l][p] + b_dec[l] + e[l][p]
//! f[l][p]   = sigma(W_enc[l] x[l][p] + b_enc[l])
//! logits[p] = U x[L][p]
//! ```
//!
//! With gates and transcoder outputs held fixed, every downstream quantity is
//! linear in the token embeddings, feature activations and offsets, which is
//! what makes edge weights checkable by ablation.

mod attribution;
mod forward;
mod intervention;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use attribution::{trace_attributions, total_effects};
pub use forward::{forward, forward_with, ForwardTrace};
pub use intervention::{apply_intervention, Intervention, InterventionMode, InterventionReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Relu,
    /// Keep the `k` largest positive pre-activations.
    TopK(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub num_features: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub nonlinearity: Nonlinearity,
    /// Magnitude of the injected per-(layer, position) offsets; 0 disables
    /// error terms entirely.
    pub error_scale: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            num_layers: 3,
            d_model: 16,
            num_features: 32,
            vocab_size: 64,
            max_positions: 4,
            nonlinearity: Nonlinearity::Relu,
            error_scale: 0.1,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("d_model", self.d_model),
            ("num_features", self.num_features),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if let Nonlinearity::TopK(k) = self.nonlinearity {
            if k == 0 || k > self.num_features {
                return bad(format!("top-k {k} outside [1, {}]", self.num_features));
            }
        }
        if !(self.error_scale >= 0.0 && self.error_scale.is_finite()) {
            return bad("error_scale must be finite and >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLayer {
    /// `m x d`
    pub w_enc: DMatrix<f64>,
    pub b_enc: DVector<f64>,
    /// `d x m`
    pub w_dec: DMatrix<f64>,
    pub b_dec: DVector<f64>,
    /// `mixing[p][q]` for `q <= p`, each `d x d`.
    pub mixing: Vec<Vec<DMatrix<f64>>>,
    /// Offset per position, each of length `d`.
    pub offsets: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ToyConfig,
    /// `vocab x d`
    pub embedding: DMatrix<f64>,
    pub layers: Vec<ToyLayer>,
    /// `vocab x d`
    pub unembedding: DMatrix<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..=hi))
}

/// Deterministic weights from `seed`, uniform with fan-in scaling.
pub fn build_toy_model(seed: u64, cfg: &ToyConfig) -> Result<ToyModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, m, v, n_pos) = (cfg.d_model, cfg.num_features, cfg.vocab_size, cfg.max_positions);
    let embedding = uniform(&mut rng, v, d, 1.0);
    let enc_scale = 1.0 / (d as f64).sqrt();
    let dec_scale = 1.0 / (m as f64).sqrt();
    let mix_scale = 0.5 / (d as f64 * n_pos as f64).sqrt();
    let layers = (0..cfg.num_layers)
        .map(|_| {
            let w_enc = uniform(&mut rng, m, d, enc_scale);
            let b_enc = uniform_vec(&mut rng, m, -0.2, 0.1);
            let w_dec = uniform(&mut rng, d, m, dec_scale);
            let b_dec = uniform_vec(&mut rng, d, -0.1, 0.1);
            let mixing = (0..n_pos)
                .map(|p| (0..=p).map(|_| uniform(&mut rng, d, d, mix_scale)).collect())
                .collect();
            let offsets = (0..n_pos)
                .map(|_| {
                    if cfg.error_scale > 0.0 {
                        uniform_vec(&mut rng, d, -cfg.error_scale, cfg.error_scale)
                    } else {
                        DVector::zeros(d)
                    }
                })
                .collect();
            ToyLayer {
                w_enc,
                b_enc,
                w_dec,
                b_dec,
                mixing,
                offsets,
            }
        })
        .collect();
    let unembedding = uniform(&mut rng, v, d, enc_scale);
    Ok(ToyModel {
        config: cfg.clone(),
        embedding,
        layers,
        unembedding,
    })
}

/// Token ids drawn from `seed`, `len` of them.
pub fn random_input(seed: u64, cfg: &ToyConfig, len: usize) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a7e);
    (0..len)
        .map(|_| rng.random_range(0..cfg.vocab_size as u32))
        .collect()
}

impl ToyModel {
    pub fn is_finite(&self) -> bool {
        let fin = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
        let finv = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        fin(&self.embedding)
            && fin(&self.unembedding)
            && self.layers.iter().all(|l| {
                fin(&l.w_enc)
                    && fin(&l.w_dec)
                    && finv(&l.b_enc)
                    && finv(&l.b_dec)
                    && l.mixing.iter().flatten().all(fin)
                    && l.offsets.iter().all(finv)
            })
    }

    pub(crate) fn check_input(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() || tokens.len() > self.config.max_positions {
            return Err(Error::InvalidConfig(format!(
                "input length {} outside [1, {}]",
                tokens.len(),
                self.config.max_positions
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::InvalidConfig(format!("token {t} outside the vocabulary")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_model() {
        let cfg = ToyConfig::default();
        assert_eq!(build_toy_model(7, &cfg).unwrap(), build_toy_model(7, &cfg).unwrap());
        assert_ne!(build_toy_model(7, &cfg).unwrap(), build_toy_model(8, &cfg).unwrap());
    }

    #[test]
    fn minimal_model_runs() {
        let cfg = ToyConfig {
            num_layers: 1,
            d_model: 1,
            num_features: 1,
            vocab_size: 2,
            max_positions: 1,
            ..ToyConfig::default()
        };
        let m = build_toy_model(1, &cfg).unwrap();
        let t = forward(&m, &[1]).unwrap();
        assert_eq!(t.logits.len(), 1);
        assert!(t.logits[0].iter().all(|x| x.is_finite()));
    }

    #[test]
    fn bad_configs() {
        let topk = ToyConfig {
            nonlinearity: Nonlinearity::TopK(0),
            ..ToyConfig::default()
        };
        assert!(matches!(build_toy_model(0, &topk), Err(Error::InvalidConfig(_))));
        let zero = ToyConfig {
            d_model: 0,
            ..ToyConfig::default()
        };
        assert!(build_toy_model(0, &zero).is_err());
    }
}
