//! Ranking metrics and the experiment harnesses built on them.
//!
//! Positives are incorrect lines (label 0) everywhere in this module, and
//! every score is read as "larger = more likely incorrect".

pub mod metrics;
mod report;
mod split;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTable;
use crate::graph::{Corpus, StepRecord};

pub use metrics::{aupr, auroc, fpr_at_95tpr, MetricTriple};
pub use report::{render_json, render_tsv, ReportRow};
pub use split::{fold_of, is_test_task, train_test_indices};

/// Metric triple for one (method, corpus) pair. `metrics` is `None` when a
/// class is missing, which only happens for strata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub corpus: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub metrics: Option<MetricTriple>,
}

impl EvalReport {
    /// Report over one score vector; a missing class is an error.
    pub fn compute(
        method: &str,
        corpus: &str,
        scores: &[f64],
        positive: &[bool],
    ) -> Result<EvalReport> {
        let report = Self::compute_lenient(method, corpus, scores, positive)?;
        if report.metrics.is_none() {
            return Err(Error::SingleClass(format!(
                "{corpus}: {} incorrect, {} correct",
                report.n_pos, report.n_neg
            )));
        }
        Ok(report)
    }

    /// Like [`compute`](Self::compute) but a missing class yields undefined
    /// metrics instead of an error.
    pub fn compute_lenient(
        method: &str,
        corpus: &str,
        scores: &[f64],
        positive: &[bool],
    ) -> Result<EvalReport> {
        let n_pos = positive.iter().filter(|&&p| p).count();
        let n_neg = positive.len() - n_pos;
        let metrics = if n_pos > 0 && n_neg > 0 {
            Some(MetricTriple::compute(scores, positive)?)
        } else if scores.len() != positive.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for {} labels",
                scores.len(),
                positive.len()
            )));
        } else {
            None
        };
        Ok(EvalReport {
            method: method.to_owned(),
            corpus: corpus.to_owned(),
            n_pos,
            n_neg,
            metrics,
        })
    }
}

/// Line-count strata used for the scalability breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LineBucket {
    UpTo10,
    UpTo20,
    UpTo30,
    Over30,
}

impl LineBucket {
    pub const ALL: [LineBucket; 4] = [
        LineBucket::UpTo10,
        LineBucket::UpTo20,
        LineBucket::UpTo30,
        LineBucket::Over30,
    ];

    pub fn of(total_lines: u32) -> LineBucket {
        match total_lines {
            0..=10 => LineBucket::UpTo10,
            11..=20 => LineBucket::UpTo20,
            21..=30 => LineBucket::UpTo30,
            _ => LineBucket::Over30,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LineBucket::UpTo10 => "[1,10]",
            LineBucket::UpTo20 => "(10,20]",
            LineBucket::UpTo30 => "(20,30]",
            LineBucket::Over30 => "(30,inf)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEvaluation {
    pub overall: EvalReport,
    /// Empty unless stratification was requested; otherwise one entry per
    /// [`LineBucket`] in order.
    pub buckets: Vec<(LineBucket, EvalReport)>,
}

/// Scores every labeled record and reports overall and, optionally, per
/// line-count bucket.
pub fn evaluate_corpus(
    corpus: &Corpus,
    tag: &str,
    method: &str,
    scorer: impl Fn(&StepRecord) -> Result<f64>,
    stratify_by_lines: bool,
) -> Result<CorpusEvaluation> {
    let mut scores = Vec::new();
    let mut positive = Vec::new();
    let mut lines = Vec::new();
    for r in corpus.labeled() {
        scores.push(scorer(r)?);
        positive.push(r.label.expect("labeled").is_positive());
        lines.push(r.total_lines);
    }
    evaluate_scores(tag, method, &scores, &positive, stratify_by_lines.then_some(&lines[..]))
}

/// Same as [`evaluate_corpus`] over precomputed scores; `total_lines`
/// enables the stratified breakdown.
pub fn evaluate_scores(
    tag: &str,
    method: &str,
    scores: &[f64],
    positive: &[bool],
    total_lines: Option<&[u32]>,
) -> Result<CorpusEvaluation> {
    let overall = EvalReport::compute(method, tag, scores, positive)?;
    let mut buckets = Vec::new();
    if let Some(lines) = total_lines {
        if lines.len() != scores.len() {
            return Err(Error::ShapeMismatch("line counts do not match scores".into()));
        }
        for b in LineBucket::ALL {
            let (s, p): (Vec<f64>, Vec<bool>) = (0..scores.len())
                .filter(|&i| LineBucket::of(lines[i]) == b)
                .map(|i| (scores[i], positive[i]))
                .unzip();
            buckets.push((b, EvalReport::compute_lenient(method, tag, &s, &p)?));
        }
    }
    Ok(CorpusEvaluation { overall, buckets })
}

/// Train tag by test tag reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub tags: Vec<String>,
    /// `cells[train][test]`.
    pub cells: Vec<Vec<EvalReport>>,
}

impl TransferMatrix {
    pub fn get(&self, train: &str, test: &str) -> Option<&EvalReport> {
        let i = self.tags.iter().position(|t| t == train)?;
        let j = self.tags.iter().position(|t| t == test)?;
        Some(&self.cells[i][j])
    }

    pub fn diagonal_mean_auroc(&self) -> Option<f64> {
        let v: Vec<f64> = (0..self.tags.len())
            .filter_map(|i| self.cells[i][i].metrics.map(|m| m.auroc))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn off_diagonal_mean_auroc(&self) -> Option<f64> {
        let n = self.tags.len();
        let v: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .filter_map(|(i, j)| self.cells[i][j].metrics.map(|m| m.auroc))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Trains on each tag's training split and scores every tag's test split.
///
/// `score_fn` must return incorrectness scores for the rows of the given
/// table, in order.
pub fn transfer_matrix<M>(
    corpora: &[(String, FeatureTable)],
    method: &str,
    train_fn: impl Fn(&FeatureTable) -> Result<M>,
    score_fn: impl Fn(&M, &FeatureTable) -> Result<Vec<f64>>,
) -> Result<TransferMatrix> {
    if corpora.len() < 2 {
        return Err(Error::InvalidConfig(
            "transfer needs at least two tagged corpora".into(),
        ));
    }
    let manifest = &corpora[0].1.manifest;
    for (tag, t) in corpora {
        if &t.manifest != manifest {
            return Err(Error::ManifestMismatch(format!(
                "corpus {tag:?} has a different feature manifest"
            )));
        }
    }
    let splits: Vec<(FeatureTable, FeatureTable)> = corpora
        .iter()
        .map(|(_, t)| {
            let (train, test) = train_test_indices(&t.meta);
            (t.subset(&train), t.subset(&test))
        })
        .collect();
    let mut cells = Vec::with_capacity(corpora.len());
    for (train_tag, (train, _)) in corpora.iter().map(|c| &c.0).zip(&splits) {
        let model = train_fn(train)?;
        let mut row = Vec::with_capacity(corpora.len());
        for (test_tag, (_, test)) in corpora.iter().map(|c| &c.0).zip(&splits) {
            let labeled: Vec<usize> = (0..test.len())
                .filter(|&i| test.meta[i].label.is_some())
                .collect();
            let test = test.subset(&labeled);
            let scores = score_fn(&model, &test)?;
            let positive: Vec<bool> = test
                .meta
                .iter()
                .map(|m| m.label.expect("labeled").is_positive())
                .collect();
            let name = format!("{train_tag}->{test_tag}");
            let mut r = EvalReport::compute_lenient(method, &name, &scores, &positive)?;
            r.corpus = name;
            row.push(r);
        }
        cells.push(row);
    }
    Ok(TransferMatrix {
        tags: corpora.iter().map(|c| c.0.clone()).collect(),
        cells,
    })
}
