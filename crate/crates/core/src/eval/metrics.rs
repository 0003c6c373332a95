//! Ranking metrics with the positive class being the lines to detect.
//!
//! Scores are "larger = more likely positive". Ties are handled as one
//! block everywhere: average ranks for AUROC, one threshold for AP and the
//! FPR sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_95: f64,
}

impl MetricTriple {
    pub fn compute(scores: &[f64], positive: &[bool]) -> Result<Self> {
        Ok(MetricTriple {
            auroc: auroc(scores, positive)?,
            aupr: aupr(scores, positive)?,
            fpr_at_95: fpr_at_95tpr(scores, positive)?,
        })
    }
}

fn check(scores: &[f64], positive: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positive.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite { row: i, column: 0 });
    }
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::SingleClass(format!("{p} positives, {n} negatives")));
    }
    Ok((p, n))
}

/// Per tie-block `(positives, negatives)`, highest score first.
fn descending_blocks(scores: &[f64], positive: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut last: Option<f64> = None;
    for i in order {
        if last != Some(scores[i]) {
            blocks.push((0, 0));
            last = Some(scores[i]);
        }
        let b = blocks.last_mut().expect("block pushed above");
        if positive[i] {
            b.0 += 1;
        } else {
            b.1 += 1;
        }
    }
    blocks
}

/// Mann-Whitney estimate of `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (p, n) = check(scores, positive)?;
    // walking blocks from the top: each positive beats every negative below it
    let mut wins = 0.0;
    let mut negatives_above = 0usize;
    let blocks = descending_blocks(scores, positive);
    let total_negatives = n;
    for (bp, bn) in blocks {
        let below = total_negatives - negatives_above - bn;
        wins += bp as f64 * (below as f64 + 0.5 * bn as f64);
        negatives_above += bn;
    }
    Ok(wins / (p as f64 * n as f64))
}

/// Average precision `sum_n (R_n - R_{n-1}) P_n` over descending thresholds.
pub fn aupr(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (p, _) = check(scores, positive)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut ap = 0.0;
    for (bp, bn) in descending_blocks(scores, positive) {
        tp += bp;
        fp += bn;
        if bp > 0 {
            ap += (bp as f64 / p as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Smallest false-positive rate among observed-score thresholds whose
/// true-positive rate is at least 95%.
pub fn fpr_at_95tpr(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let (p, n) = check(scores, positive)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (bp, bn) in descending_blocks(scores, positive) {
        tp += bp;
        fp += bn;
        // tp / p >= 0.95, in integers
        if 20 * tp >= 19 * p {
            return Ok(fp as f64 / n as f64);
        }
    }
    unreachable!("the lowest threshold admits every positive")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(pos: &[f64], neg: &[f64]) -> (Vec<f64>, Vec<bool>) {
        let mut s = pos.to_vec();
        s.extend_from_slice(neg);
        let mut l = vec![true; pos.len()];
        l.extend(vec![false; neg.len()]);
        (s, l)
    }

    #[test]
    fn auroc_examples() {
        let (s, l) = split(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(auroc(&s, &l).unwrap(), 1.0);
        let (s, l) = split(&[0.5, 0.5], &[0.5, 0.5, 0.5]);
        assert_eq!(auroc(&s, &l).unwrap(), 0.5);
        let (s, l) = split(&[0.8, 0.6], &[0.9, 0.5, 0.2]);
        assert_eq!(auroc(&s, &l).unwrap(), 4.0 / 6.0);
    }

    #[test]
    fn aupr_examples() {
        let (s, l) = split(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(aupr(&s, &l).unwrap(), 1.0);
        // descending labels: +, -, +
        let s = [0.9, 0.5, 0.1];
        let l = [true, false, true];
        assert!((aupr(&s, &l).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fpr_examples() {
        let (s, l) = split(&[0.9, 0.3], &[0.5, 0.4, 0.2]);
        assert_eq!(fpr_at_95tpr(&s, &l).unwrap(), 2.0 / 3.0);
        let (s, l) = split(&[0.9, 0.8], &[0.2, 0.1]);
        assert_eq!(fpr_at_95tpr(&s, &l).unwrap(), 0.0);
        let (s, l) = split(&[0.4; 3], &[0.4; 4]);
        assert_eq!(fpr_at_95tpr(&s, &l).unwrap(), 1.0);
    }

    #[test]
    fn tpr_boundary_is_exact() {
        // 19 of 20 positives above every negative: TPR 0.95 reached exactly
        let mut s: Vec<f64> = (0..19).map(|i| 10.0 + i as f64).collect();
        s.push(0.0);
        s.extend([1.0, 2.0]);
        let mut l = vec![true; 20];
        l.extend([false, false]);
        assert_eq!(fpr_at_95tpr(&s, &l).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass(_))));
        assert!(matches!(aupr(&[0.1], &[true, false]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(
            fpr_at_95tpr(&[f64::NAN, 0.2], &[true, false]),
            Err(Error::NonFinite { row: 0, .. })
        ));
    }
}
