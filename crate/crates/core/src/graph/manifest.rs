//! Line-delimited corpus manifests and per-line token traces.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temperatures at which traces record max-probability and energy.
pub const TEMPERATURE_GRID: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.5];

/// Line correctness. `1 = correct`, `0 = wrong`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Incorrect,
    Correct,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Incorrect => 0,
            Label::Correct => 1,
        }
    }

    /// Incorrect lines are the positive class for every detection metric.
    pub fn is_positive(self) -> bool {
        self == Label::Incorrect
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Incorrect),
            1 => Ok(Label::Correct),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.as_u8()
    }
}

/// Max-probability and energy of every token at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureStats {
    pub temperature: f64,
    /// `-T * logsumexp(logits / T)` per token.
    pub energy: Vec<f64>,
    pub max_prob: Vec<f64>,
}

/// Per-token output statistics of one generated line. Full-vocabulary
/// logits are reduced to these at export time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenTrace {
    pub chosen_logprob: Vec<f64>,
    pub max_prob: Vec<f64>,
    pub entropy: Vec<f64>,
    pub grid: Vec<TemperatureStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<u32>,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl TokenTrace {
    /// Reduces raw logits (one vector per generated token) and the chosen
    /// token ids to trace statistics on [`TEMPERATURE_GRID`].
    pub fn from_logits(logits: &[Vec<f64>], chosen: &[usize]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::EmptyTrace);
        }
        if logits.len() != chosen.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} logit rows but {} chosen tokens",
                logits.len(),
                chosen.len()
            )));
        }
        let vocab = logits[0].len();
        let mut trace = TokenTrace {
            chosen_logprob: Vec::new(),
            max_prob: Vec::new(),
            entropy: Vec::new(),
            grid: TEMPERATURE_GRID
                .iter()
                .map(|&t| TemperatureStats {
                    temperature: t,
                    energy: Vec::new(),
                    max_prob: Vec::new(),
                })
                .collect(),
            vocab_size: Some(vocab as u32),
        };
        for (row, &c) in logits.iter().zip(chosen) {
            if row.len() != vocab || c >= vocab {
                return Err(Error::ShapeMismatch(
                    "ragged logits or chosen token out of range".into(),
                ));
            }
            let lse = log_sum_exp(row.iter().copied());
            let logp: Vec<f64> = row.iter().map(|&x| x - lse).collect();
            trace.chosen_logprob.push(logp[c]);
            trace
                .max_prob
                .push(logp.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp());
            let h: f64 = logp
                .iter()
                .filter(|&&lp| lp > f64::NEG_INFINITY)
                .map(|&lp| -lp.exp() * lp)
                .sum();
            trace.entropy.push(h.max(0.0));
            for stats in &mut trace.grid {
                let t = stats.temperature;
                let lse_t = log_sum_exp(row.iter().map(|&x| x / t));
                stats.energy.push(-t * lse_t);
                let max_scaled = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
                stats.max_prob.push((max_scaled - lse_t).exp());
            }
        }
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.chosen_logprob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen_logprob.is_empty()
    }

    pub fn at_temperature(&self, t: f64) -> Option<&TemperatureStats> {
        self.grid.iter().find(|s| (s.temperature - t).abs() < 1e-9)
    }

    /// Invariant violations, empty when the trace is well formed.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.len();
        if n == 0 {
            out.push("trace has no tokens".to_owned());
        }
        let lens_ok = self.max_prob.len() == n
            && self.entropy.len() == n
            && self
                .grid
                .iter()
                .all(|s| s.energy.len() == n && s.max_prob.len() == n);
        if !lens_ok {
            out.push("per-token lists differ in length".to_owned());
        }
        if self.chosen_logprob.iter().any(|&x| !(x <= 0.0)) {
            out.push("chosen_logprob must be <= 0".to_owned());
        }
        let prob_ok = |p: &f64| *p > 0.0 && *p <= 1.0;
        if !self.max_prob.iter().all(prob_ok)
            || !self.grid.iter().all(|s| s.max_prob.iter().all(prob_ok))
        {
            out.push("max_prob must lie in (0, 1]".to_owned());
        }
        if self.entropy.iter().any(|&h| !(h >= 0.0)) {
            out.push("entropy must be >= 0".to_owned());
        }
        if let Some(v) = self.vocab_size {
            let cap = f64::from(v.max(1)).ln() + 1e-9;
            if self.entropy.iter().any(|&h| h > cap) {
                out.push("entropy exceeds ln(vocab_size)".to_owned());
            }
        }
        if self.grid.iter().any(|s| !(s.temperature > 0.0)) {
            out.push("grid temperatures must be > 0".to_owned());
        }
        out
    }
}

/// One labeled line of generated code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub task_id: String,
    pub step_index: u32,
    pub language: String,
    pub label: Option<Label>,
    pub total_lines: u32,
    pub graph_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TokenTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_line: Option<String>,
}

impl StepRecord {
    pub fn key(&self) -> (&str, u32) {
        (&self.task_id, self.step_index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub records: Vec<StepRecord>,
    pub manifest_path: PathBuf,
}

impl Corpus {
    /// Graph path of a record, resolved against the manifest's directory.
    pub fn resolve(&self, record: &StepRecord) -> PathBuf {
        if record.graph_path.is_absolute() {
            return record.graph_path.clone();
        }
        self.manifest_path
            .parent()
            .unwrap_or_else(|| Path::new(""))
            .join(&record.graph_path)
    }

    pub fn labeled(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.label.is_some())
    }
}

/// Parses manifest text; `manifest_path` only anchors relative graph paths.
pub fn parse_manifest(text: &str, manifest_path: &Path) -> Result<Corpus> {
    let mut records = Vec::new();
    let mut keys = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: StepRecord = serde_json::from_str(raw).map_err(|e| Error::Schema {
            line,
            message: e.to_string(),
        })?;
        let schema = |message: String| Error::Schema { line, message };
        if record.total_lines < 1 {
            return Err(schema("total_lines must be >= 1".into()));
        }
        if record.step_index >= record.total_lines {
            return Err(schema(format!(
                "step_index {} must be below total_lines {}",
                record.step_index, record.total_lines
            )));
        }
        if let Some(trace) = &record.trace {
            if let Some(problem) = trace.violations().into_iter().next() {
                return Err(schema(format!("invalid trace: {problem}")));
            }
        }
        if !keys.insert((record.task_id.clone(), record.step_index)) {
            return Err(Error::DuplicateStep {
                task_id: record.task_id,
                step_index: record.step_index,
                line,
            });
        }
        records.push(record);
    }
    Ok(Corpus {
        records,
        manifest_path: manifest_path.to_owned(),
    })
}

pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// Manifest text, one record per line in the given order.
pub fn write_manifest(records: &[StepRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}
