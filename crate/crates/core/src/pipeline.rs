//! End-to-end runs: load, prune, extract, train, evaluate, project, report.
//!
//! Every artifact is rendered in memory and then written with a
//! write-then-rename, so a failed run never leaves a truncated file behind.
//! Outputs carry no timestamps; two runs over identical inputs and config
//! produce identical bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{fit_temperature, score_line_with, Aggregation, BaselineMethod};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_scores, fold_of, render_tsv, EvalReport, train_test_indices, transfer_matrix,
    ReportRow,
};
use crate::features::{extract_features, feature_manifest, pca_project, FeatureTable, RowMeta};
use crate::gbdt::{feature_importances, train_gbdt, GbdtConfig, GbdtModel};
use crate::graph::{load_manifest, parse_graph, Corpus, Label, StepRecord};
use crate::prune::{prune_graph, PrunerConfig};

pub const RUN_RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusInput {
    pub tag: String,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Grouped k-fold cross-validation; every labeled row is scored once.
    CrossValidation,
    /// Grouped 80/20 split; only test rows are scored.
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpora: Vec<CorpusInput>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Worker threads for per-graph stages; 0 uses every core.
    pub jobs: usize,
    /// `gbdt`, `maxprob`, `ppl`, `entropy`, `temp` (temperature fitted on
    /// training rows), `temp:T`, `energy`, `energy:T`.
    pub methods: Vec<String>,
    pub protocol: Protocol,
    pub folds: usize,
    pub stratify_by_lines: bool,
    /// Permute labels before training and evaluation (null-model check).
    pub shuffle_labels: bool,
    pub aggregation: Aggregation,
    pub pruner: PrunerConfig,
    pub gbdt: GbdtConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpora: Vec::new(),
            out_dir: PathBuf::from("out"),
            seed: 42,
            jobs: 0,
            methods: ["gbdt", "maxprob", "ppl", "entropy", "temp", "energy"]
                .map(String::from)
                .to_vec(),
            protocol: Protocol::CrossValidation,
            folds: 5,
            stratify_by_lines: true,
            shuffle_labels: false,
            aggregation: Aggregation::Mean,
            pruner: PrunerConfig::default(),
            gbdt: GbdtConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads a TOML config; relative manifest paths are taken relative to
    /// the config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput(path.to_owned()),
            _ => Error::io(path, e),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for c in &mut cfg.corpora {
            if c.manifest.is_relative() {
                c.manifest = base.join(&c.manifest);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.corpora.is_empty() {
            return Err(Error::InvalidConfig("no input corpora".into()));
        }
        let mut tags: Vec<&str> = self.corpora.iter().map(|c| c.tag.as_str()).collect();
        tags.sort_unstable();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("corpus tags must be unique".into()));
        }
        if self.folds < 2 && self.protocol == Protocol::CrossValidation {
            return Err(Error::InvalidConfig("cross-validation needs >= 2 folds".into()));
        }
        for m in &self.methods {
            Method::parse(m)?;
        }
        self.pruner.validate()?;
        self.gbdt.validate()
    }

    fn gbdt_config(&self) -> GbdtConfig {
        GbdtConfig {
            seed: self.seed,
            ..self.gbdt.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Method {
    Gbdt,
    Baseline(BaselineMethod),
    FittedTemperature,
}

impl Method {
    fn parse(s: &str) -> Result<Method> {
        match s.to_ascii_lowercase().as_str() {
            "gbdt" => Ok(Method::Gbdt),
            "temp" | "temperature" => Ok(Method::FittedTemperature),
            _ => s.parse().map(Method::Baseline),
        }
    }

    fn name(&self) -> String {
        match self {
            Method::Gbdt => "GBDT".into(),
            Method::Baseline(b) => b.name(),
            Method::FittedTemperature => "TempScaling(fitted)".into(),
        }
    }
}

// ----------------------------------------------------------------------------
// Extraction

/// Feature table of one corpus plus the records, both in `(task_id,
/// step_index)` order, and the hash of every graph file read.
pub struct ExtractedCorpus {
    pub table: FeatureTable,
    pub records: Vec<StepRecord>,
    pub input_hashes: Vec<(PathBuf, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(path.to_owned()),
        _ => Error::io(path, e),
    })
}

/// Prunes and extracts every graph of a corpus (in parallel on the current
/// rayon pool).
pub fn extract_corpus(corpus: &Corpus, pruner: &PrunerConfig) -> Result<ExtractedCorpus> {
    let mut records = corpus.records.clone();
    records.sort_by(|a, b| a.key().cmp(&b.key()));
    let rows: Vec<(Vec<f64>, usize, String)> = records
        .par_iter()
        .map(|r| {
            let path = corpus.resolve(r);
            let bytes = read_input(&path)?;
            let g = parse_graph(&bytes)?;
            let fv = extract_features(&prune_graph(&g, pruner)?)?;
            Ok((fv.values, g.num_layers() as usize, sha256_hex(&bytes)))
        })
        .collect::<Result<_>>()?;
    let num_layers = rows.first().map_or(1, |r| r.1);
    let mut table = FeatureTable::new(feature_manifest(num_layers));
    let mut input_hashes = Vec::with_capacity(rows.len());
    for (r, (values, layers, hash)) in records.iter().zip(rows) {
        if layers != num_layers {
            return Err(Error::ManifestMismatch(format!(
                "{}: {layers} layers where the corpus has {num_layers}",
                r.graph_path.display()
            )));
        }
        table.push(RowMeta::from(r), values)?;
        input_hashes.push((corpus.resolve(r), hash));
    }
    Ok(ExtractedCorpus {
        table,
        records,
        input_hashes,
    })
}

// ----------------------------------------------------------------------------
// Scoring protocols

fn shuffled_labels(labels: &[Label], seed: u64) -> Vec<Label> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut out = labels.to_vec();
    out.shuffle(&mut rng);
    out
}

struct Split {
    /// `(train rows, scored rows)` per fold, indices into the labeled rows.
    folds: Vec<(Vec<usize>, Vec<usize>)>,
}

fn make_split(meta: &[RowMeta], protocol: Protocol, k: usize) -> Split {
    let n = meta.len();
    let folds = match protocol {
        Protocol::Holdout => vec![train_test_indices(meta)],
        Protocol::CrossValidation => (0..k)
            .map(|f| (0..n).partition(|&i| fold_of(&meta[i].task_id, k) != f))
            .collect(),
    };
    Split { folds }
}

fn train_on(x: &[Vec<f64>], y: &[Label], rows: &[usize], manifest: &[String], cfg: &GbdtConfig) -> Result<GbdtModel> {
    let xs: Vec<Vec<f64>> = rows.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<Label> = rows.iter().map(|&i| y[i]).collect();
    train_gbdt(&xs, &ys, manifest.to_vec(), cfg)
}

/// Scores of one method on the scored rows of every fold, as
/// `(labeled-row index, score)` sorted by index. Rows without a trace are
/// skipped for trace-based methods.
fn method_scores(
    method: Method,
    x: &[Vec<f64>],
    y: &[Label],
    records: &[&StepRecord],
    manifest: &[String],
    split: &Split,
    cfg: &RunConfig,
) -> Result<Vec<(usize, f64)>> {
    let per_fold: Vec<Vec<(usize, f64)>> = split
        .folds
        .par_iter()
        .map(|(train, test)| -> Result<Vec<(usize, f64)>> {
            let baseline = |b: BaselineMethod| -> Result<Vec<(usize, f64)>> {
                test.iter()
                    .filter_map(|&i| records[i].trace.as_ref().map(|t| (i, t)))
                    .map(|(i, t)| Ok((i, score_line_with(t, b, cfg.aggregation)?)))
                    .collect()
            };
            match method {
                Method::Gbdt => {
                    let model = train_on(x, y, train, manifest, &cfg.gbdt_config())?;
                    Ok(test.iter().map(|&i| (i, -model.margin(&x[i]))).collect())
                }
                Method::Baseline(b) => baseline(b),
                Method::FittedTemperature => {
                    let fit: Vec<StepRecord> = train
                        .iter()
                        .map(|&i| StepRecord {
                            label: Some(y[i]),
                            ..records[i].clone()
                        })
                        .collect();
                    baseline(BaselineMethod::TempScaling(fit_temperature(&fit)?))
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut all: Vec<(usize, f64)> = per_fold.into_iter().flatten().collect();
    all.sort_by_key(|p| p.0);
    Ok(all)
}

// ----------------------------------------------------------------------------
// Artifacts

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
    pub path: Option<PathBuf>,
}

impl ErrorReport {
    pub fn new(e: &Error) -> Self {
        let path = match e {
            Error::MissingInput(p) | Error::Io { path: p, .. } => Some(p.clone()),
            _ => None,
        };
        ErrorReport {
            kind: e.kind().to_owned(),
            message: e.to_string(),
            path,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Serialize)]
struct TopFeatures {
    corpus: String,
    features: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize)]
struct Report {
    evaluations: Vec<ReportRow>,
    transfer: Vec<ReportRow>,
    top_features: Vec<TopFeatures>,
}

#[derive(Debug, Clone, Serialize)]
struct HashedFile {
    path: String,
    sha256: String,
}

#[derive(Debug, Clone, Serialize)]
struct RunRecord {
    format_version: u32,
    tool_version: &'static str,
    config_sha256: String,
    config: RunConfig,
    inputs: Vec<HashedFile>,
    artifacts: Vec<HashedFile>,
}

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    /// Unrounded overall report per (corpus, method).
    pub overall: Vec<EvalReport>,
    pub rows: Vec<ReportRow>,
    pub transfer: Vec<ReportRow>,
    pub artifacts: Vec<PathBuf>,
}

impl RunSummary {
    /// Overall AUROC of a method on a corpus.
    pub fn auroc(&self, method: &str, corpus: &str) -> Option<f64> {
        self.overall
            .iter()
            .find(|r| r.method == method && r.corpus == corpus)
            .and_then(|r| r.metrics)
            .map(|m| m.auroc)
    }
}

fn pca_csv(table: &FeatureTable) -> Result<String> {
    let p = pca_project(&table.values)?;
    let mut out = format!(
        "# explained_variance_ratio {:.9} {:.9}\ntask_id,step_index,x,y,label\n",
        p.explained_variance_ratio[0], p.explained_variance_ratio[1]
    );
    for (m, xy) in table.meta.iter().zip(&p.coords) {
        let label = m.label.map_or(String::new(), |l| l.as_u8().to_string());
        out.push_str(&format!(
            "{},{},{:.9},{:.9},{}\n",
            m.task_id, m.step_index, xy[0], xy[1], label
        ));
    }
    Ok(out)
}

/// Runs every stage for every configured corpus and writes the artifacts.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(cfg))
}

fn run_inner(cfg: &RunConfig) -> Result<RunSummary> {
    let methods: Vec<Method> = cfg.methods.iter().map(|m| Method::parse(m)).collect::<Result<_>>()?;
    let mut files: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let mut inputs: Vec<HashedFile> = Vec::new();
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut overall = Vec::new();
    let mut top_features = Vec::new();
    let mut tables: Vec<(String, FeatureTable)> = Vec::new();

    for input in &cfg.corpora {
        let manifest_bytes = read_input(&input.manifest)?;
        inputs.push(HashedFile {
            path: input.manifest.display().to_string(),
            sha256: sha256_hex(&manifest_bytes),
        });
        let corpus = load_manifest(&input.manifest)?;
        let ex = extract_corpus(&corpus, &cfg.pruner)?;
        inputs.extend(ex.input_hashes.iter().map(|(p, h)| HashedFile {
            path: p.display().to_string(),
            sha256: h.clone(),
        }));
        let tag = &input.tag;
        files.push((cfg.out_dir.join(format!("features_{tag}.csv")), ex.table.to_csv().into_bytes()));

        // labeled rows, optionally with permuted labels
        let labeled: Vec<usize> = (0..ex.table.len())
            .filter(|&i| ex.table.meta[i].label.is_some())
            .collect();
        let mut table = ex.table.subset(&labeled);
        let mut y: Vec<Label> = table.meta.iter().map(|m| m.label.expect("labeled")).collect();
        if cfg.shuffle_labels {
            y = shuffled_labels(&y, cfg.seed);
            for (m, &l) in table.meta.iter_mut().zip(&y) {
                m.label = Some(l);
            }
        }
        let records: Vec<&StepRecord> = labeled.iter().map(|&i| &ex.records[i]).collect();
        let split = make_split(&table.meta, cfg.protocol, cfg.folds);
        for &method in &methods {
            let scored = method_scores(
                method,
                &table.values,
                &y,
                &records,
                &table.manifest,
                &split,
                cfg,
            )?;
            if scored.is_empty() {
                continue;
            }
            let scores: Vec<f64> = scored.iter().map(|p| p.1).collect();
            let positive: Vec<bool> = scored.iter().map(|p| y[p.0].is_positive()).collect();
            let lines: Vec<u32> = scored.iter().map(|p| table.meta[p.0].total_lines).collect();
            let ev = evaluate_scores(
                tag,
                &method.name(),
                &scores,
                &positive,
                cfg.stratify_by_lines.then_some(&lines[..]),
            )?;
            rows.extend(ReportRow::from_evaluation(&ev));
            overall.push(ev.overall);
        }

        let fit_rows: Vec<usize> = match cfg.protocol {
            Protocol::CrossValidation => (0..table.len()).collect(),
            Protocol::Holdout => train_test_indices(&table.meta).0,
        };
        let model = train_on(&table.values, &y, &fit_rows, &table.manifest, &cfg.gbdt_config())?;
        top_features.push(TopFeatures {
            corpus: tag.clone(),
            features: feature_importances(&model).into_iter().take(10).collect(),
        });
        files.push((cfg.out_dir.join(format!("model_{tag}.json")), model.to_json().into_bytes()));
        match pca_csv(&ex.table) {
            Ok(csv) => files.push((cfg.out_dir.join(format!("pca_{tag}.csv")), csv.into_bytes())),
            Err(Error::DegenerateInput(_)) => {}
            Err(e) => return Err(e),
        }
        tables.push((tag.clone(), table));
    }

    let mut transfer = Vec::new();
    if tables.len() >= 2 {
        let gcfg = cfg.gbdt_config();
        let tm = transfer_matrix(
            &tables,
            "GBDT",
            |t| {
                let (x, y) = t.labeled();
                train_gbdt(&x, &y, t.manifest.clone(), &gcfg)
            },
            |m, t| m.score_table(t),
        )?;
        transfer = tm.cells.iter().flatten().map(|r| ReportRow::new(r, "all")).collect();
        files.push((cfg.out_dir.join("transfer.tsv"), render_tsv(&transfer).into_bytes()));
    }

    let report = Report {
        evaluations: rows.clone(),
        transfer: transfer.clone(),
        top_features,
    };
    let mut report_json = serde_json::to_string_pretty(&report).expect("report serializes");
    report_json.push('\n');
    files.push((cfg.out_dir.join("report.json"), report_json.into_bytes()));
    files.push((cfg.out_dir.join("report.tsv"), render_tsv(&rows).into_bytes()));

    let config_text = serde_json::to_string(cfg).expect("config serializes");
    let record = RunRecord {
        format_version: RUN_RECORD_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(config_text.as_bytes()),
        config: cfg.clone(),
        inputs,
        artifacts: files
            .iter()
            .map(|(p, b)| HashedFile {
                path: p.file_name().expect("artifact name").to_string_lossy().into_owned(),
                sha256: sha256_hex(b),
            })
            .collect(),
    };
    let mut record_json = serde_json::to_string_pretty(&record).expect("record serializes");
    record_json.push('\n');
    files.push((cfg.out_dir.join("run.json"), record_json.into_bytes()));

    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    Ok(RunSummary {
        overall,
        rows,
        transfer,
        artifacts: files.into_iter().map(|f| f.0).collect(),
    })
}
