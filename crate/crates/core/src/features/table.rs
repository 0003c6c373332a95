use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Label, StepRecord};

const META_COLUMNS: [&str; 5] = ["task_id", "step_index", "language", "label", "total_lines"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowMeta {
    pub task_id: String,
    pub step_index: u32,
    pub language: String,
    pub label: Option<Label>,
    pub total_lines: u32,
}

impl From<&StepRecord> for RowMeta {
    fn from(r: &StepRecord) -> Self {
        RowMeta {
            task_id: r.task_id.clone(),
            step_index: r.step_index,
            language: r.language.clone(),
            label: r.label,
            total_lines: r.total_lines,
        }
    }
}

/// Feature vectors of one corpus with their row identities.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub manifest: Vec<String>,
    pub meta: Vec<RowMeta>,
    pub values: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn new(manifest: Vec<String>) -> Self {
        FeatureTable {
            manifest,
            meta: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, meta: RowMeta, values: Vec<f64>) -> Result<()> {
        if values.len() != self.manifest.len() {
            return Err(Error::ShapeMismatch(format!(
                "row has {} values, manifest has {}",
                values.len(),
                self.manifest.len()
            )));
        }
        self.meta.push(meta);
        self.values.push(values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> FeatureTable {
        FeatureTable {
            manifest: self.manifest.clone(),
            meta: indices.iter().map(|&i| self.meta[i].clone()).collect(),
            values: indices.iter().map(|&i| self.values[i].clone()).collect(),
        }
    }

    /// Labeled rows only, as `(features, labels)`.
    pub fn labeled(&self) -> (Vec<Vec<f64>>, Vec<Label>) {
        self.meta
            .iter()
            .zip(&self.values)
            .filter_map(|(m, v)| m.label.map(|l| (v.clone(), l)))
            .unzip()
    }

    /// CSV text: the identity columns followed by the feature manifest.
    /// Floats are written in their shortest exact form.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let header: Vec<&str> = META_COLUMNS
            .iter()
            .copied()
            .chain(self.manifest.iter().map(String::as_str))
            .collect();
        w.write_record(&header).expect("in-memory csv");
        for (m, row) in self.meta.iter().zip(&self.values) {
            let mut fields = vec![
                m.task_id.clone(),
                m.step_index.to_string(),
                m.language.clone(),
                m.label.map_or(String::new(), |l| l.as_u8().to_string()),
                m.total_lines.to_string(),
            ];
            fields.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&fields).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 fields")
    }

    pub fn from_csv(text: &str) -> Result<FeatureTable> {
        let schema = |line: usize, message: String| Error::Schema { line, message };
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| schema(1, e.to_string()))?.clone();
        if header.len() < META_COLUMNS.len()
            || header.iter().zip(META_COLUMNS).any(|(h, m)| h != m)
        {
            return Err(schema(1, "missing identity columns".into()));
        }
        let mut table = FeatureTable::new(
            header
                .iter()
                .skip(META_COLUMNS.len())
                .map(str::to_owned)
                .collect(),
        );
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| schema(line, e.to_string()))?;
            let num = |s: &str| -> Result<u32> {
                s.parse().map_err(|_| schema(line, format!("bad integer {s:?}")))
            };
            let label = match &rec[3] {
                "" => None,
                s => Some(
                    Label::try_from(num(s)? as u8)
                        .map_err(|e| schema(line, e))?,
                ),
            };
            let meta = RowMeta {
                task_id: rec[0].to_owned(),
                step_index: num(&rec[1])?,
                language: rec[2].to_owned(),
                label,
                total_lines: num(&rec[4])?,
            };
            let values = rec
                .iter()
                .skip(META_COLUMNS.len())
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| schema(line, format!("bad number {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            table.push(meta, values)?;
        }
        Ok(table)
    }

    pub fn read(path: &Path) -> Result<FeatureTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}
