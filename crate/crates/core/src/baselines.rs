//! Black-box confidence scorers over recorded token traces.
//!
//! Scores are oriented so that larger means "more likely incorrect", which
//! makes them directly comparable with the white-box classifier once its
//! correctness probability is negated.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::auroc;
use crate::graph::{StepRecord, TokenTrace, TEMPERATURE_GRID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", content = "temperature", rename_all = "snake_case")]
pub enum BaselineMethod {
    MaxProb,
    Ppl,
    Entropy,
    TempScaling(f64),
    Energy(f64),
}

impl BaselineMethod {
    /// The five scorers as reported side by side (temperature 1 for the
    /// temperature-dependent ones).
    pub fn standard_suite() -> [BaselineMethod; 5] {
        [
            BaselineMethod::MaxProb,
            BaselineMethod::Ppl,
            BaselineMethod::Entropy,
            BaselineMethod::TempScaling(1.0),
            BaselineMethod::Energy(1.0),
        ]
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineMethod::MaxProb => write!(f, "MaxProb"),
            BaselineMethod::Ppl => write!(f, "PPL"),
            BaselineMethod::Entropy => write!(f, "Entropy"),
            BaselineMethod::TempScaling(t) => write!(f, "TempScaling(T={t})"),
            BaselineMethod::Energy(t) => write!(f, "Energy(T={t})"),
        }
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    /// `maxprob`, `ppl`, `entropy`, `temp[:T]`, `energy[:T]`; T defaults to 1.
    fn from_str(s: &str) -> Result<Self> {
        let (name, t) = match s.split_once(':') {
            Some((n, t)) => (
                n,
                t.parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("bad temperature in {s:?}")))?,
            ),
            None => (s, 1.0),
        };
        match name.to_ascii_lowercase().as_str() {
            "maxprob" => Ok(BaselineMethod::MaxProb),
            "ppl" => Ok(BaselineMethod::Ppl),
            "entropy" => Ok(BaselineMethod::Entropy),
            "temp" | "temperature" => Ok(BaselineMethod::TempScaling(t)),
            "energy" => Ok(BaselineMethod::Energy(t)),
            other => Err(Error::InvalidConfig(format!("unknown baseline {other:?}"))),
        }
    }
}

/// How per-token statistics collapse to one line score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Arithmetic mean of the statistic over the line's tokens.
    #[default]
    Mean,
    /// The least confident token of the line.
    Worst,
    /// The final token of the line.
    Last,
}

pub fn score_line(trace: &TokenTrace, method: BaselineMethod) -> Result<f64> {
    score_line_with(trace, method, Aggregation::Mean)
}

pub fn score_line_with(
    trace: &TokenTrace,
    method: BaselineMethod,
    aggregation: Aggregation,
) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let at = |t: f64| trace.at_temperature(t).ok_or(Error::MissingTemperature(t));
    let (raw, orient): (&[f64], fn(f64) -> f64) = match method {
        BaselineMethod::MaxProb => (&trace.max_prob, |x| -x),
        BaselineMethod::Ppl => (&trace.chosen_logprob, |x| (-x).exp()),
        BaselineMethod::Entropy => (&trace.entropy, |x| x),
        BaselineMethod::TempScaling(t) => (&at(t)?.max_prob, |x| -x),
        BaselineMethod::Energy(t) => (&at(t)?.energy, |x| x),
    };
    if raw.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(match aggregation {
        Aggregation::Mean => orient(raw.iter().sum::<f64>() / raw.len() as f64),
        Aggregation::Worst => raw
            .iter()
            .map(|&x| orient(x))
            .fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Last => orient(*raw.last().expect("non-empty")),
    })
}

/// Grid temperature whose temperature-scaled max-probability score has the
/// best AUROC on the labeled, traced records; ties go to the smaller T.
pub fn fit_temperature(records: &[StepRecord]) -> Result<f64> {
    let usable: Vec<(&TokenTrace, bool)> = records
        .iter()
        .filter_map(|r| Some((r.trace.as_ref()?, r.label?.is_positive())))
        .collect();
    let positives = usable.iter().filter(|(_, p)| *p).count();
    if positives == 0 || positives == usable.len() {
        return Err(Error::InsufficientLabels(format!(
            "need traced records of both classes, have {positives} incorrect of {}",
            usable.len()
        )));
    }
    let labels: Vec<bool> = usable.iter().map(|(_, p)| *p).collect();
    let mut best: Option<(f64, f64)> = None;
    for &t in &TEMPERATURE_GRID {
        let scores = usable
            .iter()
            .map(|(trace, _)| score_line(trace, BaselineMethod::TempScaling(t)))
            .collect::<Result<Vec<_>>>()?;
        let a = auroc(&scores, &labels)?;
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((t, a));
        }
    }
    Ok(best.expect("grid is non-empty").0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Label, TemperatureStats};
    use std::f64::consts::LN_2;

    fn flat_trace(logprobs: &[f64]) -> TokenTrace {
        let n = logprobs.len();
        TokenTrace {
            chosen_logprob: logprobs.to_vec(),
            max_prob: vec![0.5; n],
            entropy: vec![0.3; n],
            grid: TEMPERATURE_GRID
                .iter()
                .map(|&t| TemperatureStats {
                    temperature: t,
                    energy: vec![-1.0; n],
                    max_prob: vec![0.5; n],
                })
                .collect(),
            vocab_size: None,
        }
    }

    #[test]
    fn perplexity_of_two_coin_flips_is_two() {
        let t = flat_trace(&[-LN_2, -LN_2]);
        assert!((score_line(&t, BaselineMethod::Ppl).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_four_way_entropy() {
        let t = TokenTrace::from_logits(&[vec![0.0; 4]], &[0]).unwrap();
        let h = score_line(&t, BaselineMethod::Entropy).unwrap();
        assert!((h - 4f64.ln()).abs() < 1e-12);
        assert!((h - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn energy_of_two_zero_logits() {
        let t = TokenTrace::from_logits(&[vec![0.0, 0.0]], &[1]).unwrap();
        let e = score_line(&t, BaselineMethod::Energy(1.0)).unwrap();
        assert!((e + LN_2).abs() < 1e-12);
        assert!((e + 0.6931).abs() < 1e-4);
    }

    #[test]
    fn orientation_and_aggregation() {
        let t = TokenTrace::from_logits(&[vec![3.0, 0.0], vec![0.0, 0.0]], &[0, 1]).unwrap();
        let mean = score_line(&t, BaselineMethod::MaxProb).unwrap();
        let worst = score_line_with(&t, BaselineMethod::MaxProb, Aggregation::Worst).unwrap();
        let last = score_line_with(&t, BaselineMethod::MaxProb, Aggregation::Last).unwrap();
        assert!((worst + 0.5).abs() < 1e-12);
        assert_eq!(worst, last);
        assert!(mean < worst);
        let ts = score_line(&t, BaselineMethod::TempScaling(1.0)).unwrap();
        assert!((ts - mean).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let mut t = flat_trace(&[-0.1]);
        assert!(matches!(
            score_line(&t, BaselineMethod::Energy(3.0)),
            Err(Error::MissingTemperature(_))
        ));
        t.chosen_logprob.clear();
        assert!(matches!(
            score_line(&t, BaselineMethod::Ppl),
            Err(Error::EmptyTrace)
        ));
    }

    #[test]
    fn method_names_parse() {
        assert_eq!("ppl".parse::<BaselineMethod>().unwrap(), BaselineMethod::Ppl);
        assert_eq!(
            "temp:2.5".parse::<BaselineMethod>().unwrap(),
            BaselineMethod::TempScaling(2.5)
        );
        assert_eq!(
            "energy".parse::<BaselineMethod>().unwrap(),
            BaselineMethod::Energy(1.0)
        );
        assert!("coe".parse::<BaselineMethod>().is_err());
    }

    fn record(label: Label, trace: TokenTrace, i: usize) -> StepRecord {
        StepRecord {
            task_id: format!("t{i}"),
            step_index: 0,
            language: "python".into(),
            label: Some(label),
            total_lines: 1,
            graph_path: "g".into(),
            trace: Some(trace),
            source_line: None,
        }
    }

    #[test]
    fn identical_scores_pick_smallest_temperature() {
        let records: Vec<_> = (0..6)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Correct } else { Label::Incorrect };
                record(label, flat_trace(&[-0.2]), i)
            })
            .collect();
        assert_eq!(fit_temperature(&records).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_rejected() {
        let records = vec![record(Label::Correct, flat_trace(&[-0.2]), 0)];
        assert!(matches!(
            fit_temperature(&records),
            Err(Error::InsufficientLabels(_))
        ));
    }

    #[test]
    fn picks_the_temperature_that_separates() {
        // only the T = 2.0 recording orders incorrect lines below correct ones;
        // elsewhere the ordering is inverted.
        let records: Vec<_> = (0..10)
            .map(|i| {
                let incorrect = i % 2 == 1;
                let mut trace = flat_trace(&[-0.2]);
                for stats in &mut trace.grid {
                    let separating = (stats.temperature - 2.0).abs() < 1e-9;
                    let conf = match (separating, incorrect) {
                        (true, true) | (false, false) => 0.3 + 0.01 * i as f64,
                        _ => 0.8 + 0.01 * i as f64,
                    };
                    stats.max_prob = vec![conf];
                }
                let label = if incorrect { Label::Incorrect } else { Label::Correct };
                record(label, trace, i)
            })
            .collect();
        assert_eq!(fit_temperature(&records).unwrap(), 2.0);
    }
}
