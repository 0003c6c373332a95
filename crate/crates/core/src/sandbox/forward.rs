use nalgebra::DVector;

use super::{Nonlinearity, ToyModel};
use crate::error::Result;

/// Everything a forward pass computed, indexed `[layer][position]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub tokens: Vec<u32>,
    /// `num_layers + 1` residual states.
    pub residual: Vec<Vec<DVector<f64>>>,
    pub preacts: Vec<Vec<DVector<f64>>>,
    /// Post-nonlinearity (and post-hook) feature values.
    pub acts: Vec<Vec<DVector<f64>>>,
    /// Gate state chosen by the nonlinearity, before any hook.
    pub gates: Vec<Vec<Vec<bool>>>,
    pub errors: Vec<Vec<DVector<f64>>>,
    pub logits: Vec<DVector<f64>>,
}

impl ForwardTrace {
    pub fn last_logits(&self) -> &DVector<f64> {
        self.logits.last().expect("at least one position")
    }

    pub fn positions(&self) -> usize {
        self.tokens.len()
    }
}

fn gate(pre: &DVector<f64>, nl: Nonlinearity) -> Vec<bool> {
    match nl {
        Nonlinearity::Relu => pre.iter().map(|&v| v > 0.0).collect(),
        Nonlinearity::TopK(k) => {
            let mut order: Vec<usize> = (0..pre.len()).collect();
            order.sort_by(|&a, &b| pre[b].total_cmp(&pre[a]).then(a.cmp(&b)));
            let mut g = vec![false; pre.len()];
            for &i in order.iter().take(k) {
                g[i] = pre[i] > 0.0;
            }
            g
        }
    }
}

pub fn forward(model: &ToyModel, tokens: &[u32]) -> Result<ForwardTrace> {
    forward_with(model, tokens, |_, _, _| {})
}

/// Forward pass with `hook(layer, position, acts)` applied to each feature
/// vector after the nonlinearity and before it is decoded.
pub fn forward_with(
    model: &ToyModel,
    tokens: &[u32],
    hook: impl Fn(usize, usize, &mut DVector<f64>),
) -> Result<ForwardTrace> {
    model.check_input(tokens)?;
    let n = tokens.len();
    let mut x: Vec<DVector<f64>> = tokens
        .iter()
        .map(|&t| model.embedding.row(t as usize).transpose())
        .collect();
    let mut trace = ForwardTrace {
        tokens: tokens.to_vec(),
        residual: vec![x.clone()],
        preacts: Vec::new(),
        acts: Vec::new(),
        gates: Vec::new(),
        errors: Vec::new(),
        logits: Vec::new(),
    };
    for (l, layer) in model.layers.iter().enumerate() {
        let mut pre_l = Vec::with_capacity(n);
        let mut act_l = Vec::with_capacity(n);
        let mut gate_l = Vec::with_capacity(n);
        let mut next = Vec::with_capacity(n);
        for p in 0..n {
            let pre = &layer.w_enc * &x[p] + &layer.b_enc;
            let g = gate(&pre, model.config.nonlinearity);
            let mut f = DVector::from_fn(pre.len(), |i, _| if g[i] { pre[i] } else { 0.0 });
            hook(l, p, &mut f);
            let mut out = &x[p] + &layer.w_dec * &f + &layer.b_dec + &layer.offsets[p];
            for q in 0..=p {
                out += &layer.mixing[p][q] * &x[q];
            }
            next.push(out);
            pre_l.push(pre);
            act_l.push(f);
            gate_l.push(g);
        }
        trace.errors.push(layer.offsets[..n].to_vec());
        trace.preacts.push(pre_l);
        trace.acts.push(act_l);
        trace.gates.push(gate_l);
        x = next;
        trace.residual.push(x.clone());
    }
    trace.logits = x.iter().map(|v| &model.unembedding * v).collect();
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{build_toy_model, random_input, ToyConfig};
    use nalgebra::DMatrix;

    #[test]
    fn zero_weights_pass_the_embedding_through() {
        let cfg = ToyConfig {
            error_scale: 0.0,
            ..ToyConfig::default()
        };
        let mut m = build_toy_model(3, &cfg).unwrap();
        for l in &mut m.layers {
            l.w_enc.fill(0.0);
            l.b_enc.fill(0.0);
            l.w_dec.fill(0.0);
            l.b_dec.fill(0.0);
            l.mixing.iter_mut().flatten().for_each(|a: &mut DMatrix<f64>| a.fill(0.0));
        }
        let tokens = [5, 9];
        let t = forward(&m, &tokens).unwrap();
        for (p, &tok) in tokens.iter().enumerate() {
            let expect = &m.unembedding * m.embedding.row(tok as usize).transpose();
            assert_eq!(t.logits[p], expect);
        }
    }

    #[test]
    fn zero_offsets_mean_zero_errors() {
        let cfg = ToyConfig {
            error_scale: 0.0,
            ..ToyConfig::default()
        };
        let m = build_toy_model(11, &cfg).unwrap();
        let t = forward(&m, &random_input(11, &cfg, 3)).unwrap();
        assert!(t.errors.iter().flatten().all(|e| e.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn forward_is_pure_and_topk_is_sparse() {
        let cfg = ToyConfig {
            nonlinearity: Nonlinearity::TopK(4),
            ..ToyConfig::default()
        };
        let m = build_toy_model(2, &cfg).unwrap();
        let input = random_input(2, &cfg, 4);
        let a = forward(&m, &input).unwrap();
        assert_eq!(a, forward(&m, &input).unwrap());
        for g in a.gates.iter().flatten() {
            assert!(g.iter().filter(|&&b| b).count() <= 4);
        }
    }
}
