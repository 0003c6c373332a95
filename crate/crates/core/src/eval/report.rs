use serde::Serialize;

use super::{CorpusEvaluation, EvalReport};

/// One display row: metrics as percentages rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub corpus: String,
    pub bucket: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub fpr_at_95: Option<f64>,
}

fn pct(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

impl ReportRow {
    pub fn new(r: &EvalReport, bucket: &str) -> Self {
        ReportRow {
            method: r.method.clone(),
            corpus: r.corpus.clone(),
            bucket: bucket.to_owned(),
            n_pos: r.n_pos,
            n_neg: r.n_neg,
            auroc: r.metrics.map(|m| pct(m.auroc)),
            aupr: r.metrics.map(|m| pct(m.aupr)),
            fpr_at_95: r.metrics.map(|m| pct(m.fpr_at_95)),
        }
    }

    pub fn from_evaluation(ev: &CorpusEvaluation) -> Vec<ReportRow> {
        std::iter::once(ReportRow::new(&ev.overall, "all"))
            .chain(ev.buckets.iter().map(|(b, r)| ReportRow::new(r, b.label())))
            .collect()
    }
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_owned(), |v| format!("{v:.2}"))
}

/// Tab-separated table with a header row.
pub fn render_tsv(rows: &[ReportRow]) -> String {
    let mut out = String::from("method\tcorpus\tbucket\tn_pos\tn_neg\tAUROC\tAUPR\tFPR@95\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.method,
            r.corpus,
            r.bucket,
            r.n_pos,
            r.n_neg,
            cell(r.auroc),
            cell(r.aupr),
            cell(r.fpr_at_95)
        ));
    }
    out
}

/// Pretty JSON array, newline terminated.
pub fn render_json(rows: &[ReportRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s
}
