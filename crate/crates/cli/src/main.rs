//! `attrgraph`: run each stage of the diagnosis pipeline from the shell.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrgraph_core::baselines::{score_line_with, Aggregation, BaselineMethod};
use attrgraph_core::eval::{evaluate_scores, render_json, render_tsv, transfer_matrix, ReportRow};
use attrgraph_core::features::{pca_project, FeatureTable};
use attrgraph_core::gbdt::{feature_importances, train_gbdt, GbdtConfig, GbdtModel};
use attrgraph_core::graph::{load_manifest, read_graph, write_graph};
use attrgraph_core::pipeline::{extract_corpus, run_pipeline, write_atomic, ErrorReport, RunConfig};
use attrgraph_core::sandbox::{
    apply_intervention, build_toy_model, random_input, trace_attributions, Intervention,
    InterventionMode, Nonlinearity, ToyConfig,
};
use attrgraph_core::synth::{generate_corpus, SynthConfig};
use attrgraph_core::{prune_graph, Error, PrunerConfig, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "attrgraph", version, about = "Line-level correctness diagnosis from attribution graphs")]
struct Cli {
    /// Worker threads for per-graph stages (0 = all cores).
    #[arg(long, global = true, env = "ATTRGRAPH_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Prune one graph to its most influential subcircuit.
    Prune {
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        pruner: PrunerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the feature table of a corpus.
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        pruner: PrunerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the boosted classifier on a feature table.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[command(flatten)]
        gbdt: GbdtArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write (task_id, step_index, score) rows; larger = more likely incorrect.
    Score {
        /// gbdt, maxprob, ppl, entropy, temp[:T], energy[:T]
        #[arg(long)]
        method: String,
        /// Feature table (gbdt).
        #[arg(long)]
        features: Option<PathBuf>,
        /// Model file (gbdt).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Manifest with token traces (baselines).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "mean")]
        aggregation: AggregationArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a score file against the labels of a manifest.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "scores")]
        method: String,
        #[arg(long, default_value = "corpus")]
        tag: String,
        /// Also report per line-count bucket.
        #[arg(long)]
        stratify: bool,
        #[arg(long)]
        json: bool,
    },
    /// Train on each tagged feature table and test on every other.
    Transfer {
        /// `tag=features.csv`, at least two.
        #[arg(long = "corpus", required = true, num_args = 1)]
        corpora: Vec<String>,
        #[command(flatten)]
        gbdt: GbdtArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-component projection of a feature table.
    Project {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a labeled synthetic corpus.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        separation: Option<f64>,
    },
    /// Toy replacement model: trace graphs and run interventions.
    Sandbox {
        #[command(subcommand)]
        command: SandboxCommand,
    },
    /// Run every stage from a config file.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "ATTRGRAPH_OUT_DIR")]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SandboxCommand {
    Trace {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 5)]
        topk_logits: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Intervene {
        #[command(flatten)]
        model: ModelArgs,
        /// `layer,position,feature`; repeatable.
        #[arg(long = "target", required = true)]
        targets: Vec<String>,
        /// suppress, amplify:K or set:V
        #[arg(long, default_value = "suppress")]
        mode: String,
        #[arg(long, default_value_t = 5)]
        topk_logits: usize,
    },
}

#[derive(Args)]
struct PrunerArgs {
    #[arg(long, default_value_t = 0.8)]
    node_threshold: f64,
    #[arg(long, default_value_t = 0.98)]
    edge_threshold: f64,
}

impl PrunerArgs {
    fn config(&self) -> Result<PrunerConfig> {
        let cfg = PrunerConfig {
            node_threshold: self.node_threshold,
            edge_threshold: self.edge_threshold,
            ..PrunerConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GbdtArgs {
    #[arg(long, default_value_t = 300)]
    rounds: usize,
    #[arg(long, default_value_t = 0.05)]
    learning_rate: f64,
    #[arg(long, default_value_t = 6)]
    max_depth: usize,
    #[arg(long, default_value_t = 20)]
    min_samples_leaf: usize,
    #[arg(long, default_value_t = 1.0)]
    subsample: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl GbdtArgs {
    fn config(&self) -> GbdtConfig {
        GbdtConfig {
            num_rounds: self.rounds,
            learning_rate: self.learning_rate,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            subsample: self.subsample,
            seed: self.seed,
            ..GbdtConfig::default()
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 32)]
    features: usize,
    #[arg(long, default_value_t = 64)]
    vocab: usize,
    #[arg(long, default_value_t = 4)]
    positions: usize,
    /// Use TopK(k) instead of ReLU.
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    error_scale: f64,
    /// Comma-separated token ids; random from the seed when absent.
    #[arg(long)]
    tokens: Option<String>,
}

impl ModelArgs {
    fn build(&self) -> Result<(attrgraph_core::sandbox::ToyModel, Vec<u32>)> {
        let cfg = ToyConfig {
            num_layers: self.layers,
            d_model: self.dim,
            num_features: self.features,
            vocab_size: self.vocab,
            max_positions: self.positions,
            nonlinearity: self.topk.map_or(Nonlinearity::Relu, Nonlinearity::TopK),
            error_scale: self.error_scale,
        };
        let model = build_toy_model(self.seed, &cfg)?;
        let tokens = match &self.tokens {
            Some(s) => s
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad token id {t:?}")))
                })
                .collect::<Result<_>>()?,
            None => random_input(self.seed, &cfg, self.positions),
        };
        Ok((model, tokens))
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AggregationArg {
    Mean,
    Worst,
    Last,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::Worst => Aggregation::Worst,
            AggregationArg::Last => Aggregation::Last,
        }
    }
}

// ----------------------------------------------------------------------------

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_mode(s: &str) -> Result<InterventionMode> {
    let bad = || Error::InvalidConfig(format!("bad intervention mode {s:?}"));
    match s.split_once(':') {
        None if s == "suppress" => Ok(InterventionMode::Suppress),
        Some(("amplify", k)) => Ok(InterventionMode::Amplify(k.parse().map_err(|_| bad())?)),
        Some(("set", v)) => Ok(InterventionMode::SetTo(v.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn parse_target(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidConfig(format!("bad target {s:?}")))?;
    match parts[..] {
        [l, p, f] => Ok((l, p, f)),
        _ => Err(Error::InvalidConfig(format!("target {s:?} needs layer,position,feature"))),
    }
}

fn read_scores(path: &Path) -> Result<BTreeMap<(String, u32), f64>> {
    let text = std::fs::read_to_string(path).map_err(|_| Error::MissingInput(path.to_owned()))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let schema = |m: &str| Error::Schema {
            line: i + 1,
            message: m.to_owned(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(schema("expected task_id, step_index, score"));
        }
        let step = f[1].parse().map_err(|_| schema("bad step_index"))?;
        let score = f[2].parse().map_err(|_| schema("bad score"))?;
        out.insert((f[0].to_owned(), step), score);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prune { graph, pruner, out } => {
            let g = read_graph(&graph)?;
            let pg = prune_graph(&g, &pruner.config()?)?;
            write_graph(&out, &pg.graph)?;
            eprintln!(
                "kept {} features, {} error nodes, {} edges",
                pg.retained_feature_count,
                pg.retained_error_count,
                pg.graph.edges().len()
            );
        }
        Command::Features {
            manifest,
            pruner,
            out,
        } => {
            let corpus = load_manifest(&manifest)?;
            let ex = extract_corpus(&corpus, &pruner.config()?)?;
            write_atomic(&out, ex.table.to_csv().as_bytes())?;
        }
        Command::Train {
            features,
            gbdt,
            out,
        } => {
            let table = FeatureTable::read(&features)?;
            let (x, y) = table.labeled();
            let model = train_gbdt(&x, &y, table.manifest.clone(), &gbdt.config())?;
            write_atomic(&out, model.to_json().as_bytes())?;
            for (name, gain) in feature_importances(&model).iter().take(5) {
                eprintln!("{name}\t{gain:.6}");
            }
        }
        Command::Score {
            method,
            features,
            model,
            manifest,
            aggregation,
            out,
        } => {
            let mut text = String::from("task_id\tstep_index\tscore\n");
            if method.eq_ignore_ascii_case("gbdt") {
                let (Some(features), Some(model)) = (features, model) else {
                    return Err(Error::InvalidConfig("gbdt scoring needs --features and --model".into()));
                };
                let table = FeatureTable::read(&features)?;
                let scores = GbdtModel::load(&model)?.score_table(&table)?;
                for (m, s) in table.meta.iter().zip(scores) {
                    text.push_str(&format!("{}\t{}\t{s:.9}\n", m.task_id, m.step_index));
                }
            } else {
                let b: BaselineMethod = method.parse()?;
                let Some(manifest) = manifest else {
                    return Err(Error::InvalidConfig("baseline scoring needs --manifest".into()));
                };
                let corpus = load_manifest(&manifest)?;
                for r in &corpus.records {
                    let trace = r.trace.as_ref().ok_or(Error::EmptyTrace)?;
                    let s = score_line_with(trace, b, aggregation.into())?;
                    text.push_str(&format!("{}\t{}\t{s:.9}\n", r.task_id, r.step_index));
                }
            }
            emit(out.as_deref(), &text)?;
        }
        Command::Eval {
            scores,
            manifest,
            method,
            tag,
            stratify,
            json,
        } => {
            let scores = read_scores(&scores)?;
            let corpus = load_manifest(&manifest)?;
            let (mut s, mut p, mut lines) = (Vec::new(), Vec::new(), Vec::new());
            for r in corpus.labeled() {
                let key = (r.task_id.clone(), r.step_index);
                let Some(&v) = scores.get(&key) else {
                    return Err(Error::InvalidConfig(format!(
                        "no score for task {:?} step {}",
                        r.task_id, r.step_index
                    )));
                };
                s.push(v);
                p.push(r.label.expect("labeled").is_positive());
                lines.push(r.total_lines);
            }
            let ev = evaluate_scores(&tag, &method, &s, &p, stratify.then_some(&lines[..]))?;
            let rows = ReportRow::from_evaluation(&ev);
            print!("{}", if json { render_json(&rows) } else { render_tsv(&rows) });
        }
        Command::Transfer { corpora, gbdt, out } => {
            let tables = corpora
                .iter()
                .map(|c| {
                    let (tag, path) = c.split_once('=').ok_or_else(|| {
                        Error::InvalidConfig(format!("expected tag=path, got {c:?}"))
                    })?;
                    Ok((tag.to_owned(), FeatureTable::read(Path::new(path))?))
                })
                .collect::<Result<Vec<_>>>()?;
            let cfg = gbdt.config();
            let tm = transfer_matrix(
                &tables,
                "GBDT",
                |t| {
                    let (x, y) = t.labeled();
                    train_gbdt(&x, &y, t.manifest.clone(), &cfg)
                },
                |m, t| m.score_table(t),
            )?;
            let rows: Vec<ReportRow> = tm.cells.iter().flatten().map(|r| ReportRow::new(r, "all")).collect();
            emit(out.as_deref(), &render_tsv(&rows))?;
        }
        Command::Project { features, out } => {
            let table = FeatureTable::read(&features)?;
            let p = pca_project(&table.values)?;
            let mut text = String::from("task_id,step_index,x,y,label\n");
            for (m, xy) in table.meta.iter().zip(&p.coords) {
                let label = m.label.map_or(String::new(), |l| l.as_u8().to_string());
                text.push_str(&format!("{},{},{:.9},{:.9},{label}\n", m.task_id, m.step_index, xy[0], xy[1]));
            }
            write_atomic(&out, text.as_bytes())?;
            eprintln!(
                "explained variance ratio {:.4} {:.4}",
                p.explained_variance_ratio[0], p.explained_variance_ratio[1]
            );
        }
        Command::Synth {
            config,
            out,
            steps,
            seed,
            separation,
        } => {
            let mut cfg = match config {
                Some(p) => SynthConfig::from_toml(
                    &std::fs::read_to_string(&p).map_err(|_| Error::MissingInput(p.clone()))?,
                )?,
                None => SynthConfig::default(),
            };
            cfg.num_steps = steps.unwrap_or(cfg.num_steps);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.separation = separation.unwrap_or(cfg.separation);
            let manifest = generate_corpus(&cfg)?.write(&out)?;
            eprintln!("wrote {}", manifest.display());
        }
        Command::Sandbox { command } => match command {
            SandboxCommand::Trace {
                model,
                topk_logits,
                out,
            } => {
                let (m, tokens) = model.build()?;
                let g = trace_attributions(&m, &tokens, topk_logits)?;
                write_graph(&out, &g)?;
            }
            SandboxCommand::Intervene {
                model,
                targets,
                mode,
                topk_logits,
            } => {
                let (m, tokens) = model.build()?;
                let iv = Intervention {
                    targets: targets.iter().map(|t| parse_target(t)).collect::<Result<_>>()?,
                    mode: parse_mode(&mode)?,
                };
                let report = apply_intervention(&m, &tokens, &iv, topk_logits)?;
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
            }
        },
        Command::Pipeline { .. } => unreachable!("handled in main"),
    }
    Ok(())
}

fn run_pipeline_command(config: &Path, out_dir: Option<PathBuf>, jobs: Option<usize>) -> ExitCode {
    let cfg = RunConfig::load(config).map(|mut c| {
        if let Some(d) = out_dir.clone() {
            c.out_dir = d;
        }
        c.jobs = jobs.unwrap_or(c.jobs);
        c
    });
    let report_dir = match &cfg {
        Ok(c) => c.out_dir.clone(),
        Err(_) => out_dir.unwrap_or_else(|| PathBuf::from("out")),
    };
    match cfg.and_then(|c| run_pipeline(&c)) {
        Ok(summary) => {
            for a in &summary.artifacts {
                eprintln!("wrote {}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            let _ = write_atomic(
                &report_dir.join("error.json"),
                ErrorReport::new(&e).to_json().as_bytes(),
            );
            ExitCode::FAILURE
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Pipeline { config, out_dir } = &cli.command {
        return run_pipeline_command(config, out_dir.clone(), cli.jobs);
    }
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
