use std::path::{Path, PathBuf};

use attrgraph_core::pipeline::{run_pipeline, CorpusInput, Protocol, RunConfig};
use attrgraph_core::synth::{generate_corpus, SynthConfig};
use attrgraph_core::Error;

fn corpus(dir: &Path, steps: usize, seed: u64, separation: f64) -> PathBuf {
    generate_corpus(&SynthConfig {
        num_steps: steps,
        seed,
        separation,
        ..SynthConfig::default()
    })
    .unwrap()
    .write(dir)
    .unwrap()
}

fn config(manifests: &[(&str, PathBuf)], out: PathBuf) -> RunConfig {
    RunConfig {
        corpora: manifests
            .iter()
            .map(|(tag, m)| CorpusInput {
                tag: tag.to_string(),
                manifest: m.clone(),
            })
            .collect(),
        out_dir: out,
        ..RunConfig::default()
    }
}

#[test]
fn unseparated_classes_score_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(&dir.path().join("c"), 2000, 17, 0.0);
    let mut cfg = config(&[("synthetic", m)], dir.path().join("out"));
    cfg.methods = vec!["gbdt".into()];
    let s = run_pipeline(&cfg).unwrap();
    let a = s.auroc("GBDT", "synthetic").unwrap();
    assert!((0.45..=0.55).contains(&a), "AUROC {a}");
}

#[test]
fn reruns_and_thread_counts_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let a = corpus(&dir.path().join("a"), 300, 1, 0.9);
    let b = corpus(&dir.path().join("b"), 300, 2, 0.6);
    let mut cfg = config(&[("a", a), ("b", b)], dir.path().join("out1"));
    cfg.gbdt.num_rounds = 40;
    cfg.jobs = 4;
    let first = run_pipeline(&cfg).unwrap();
    let names: Vec<String> = first
        .artifacts
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    for expected in ["report.json", "report.tsv", "transfer.tsv", "run.json", "features_a.csv", "model_b.json", "pca_a.csv"] {
        assert!(names.iter().any(|n| n == expected), "missing {expected}");
    }
    let read = |dir: &Path, name: &str| std::fs::read(dir.join(name)).unwrap();
    let before: Vec<Vec<u8>> = names.iter().map(|n| read(&cfg.out_dir, n)).collect();
    run_pipeline(&cfg).unwrap();
    let after: Vec<Vec<u8>> = names.iter().map(|n| read(&cfg.out_dir, n)).collect();
    assert_eq!(before, after);

    let mut single = cfg.clone();
    single.jobs = 1;
    single.out_dir = dir.path().join("out2");
    run_pipeline(&single).unwrap();
    for n in names.iter().filter(|n| n.as_str() != "run.json") {
        assert_eq!(read(&cfg.out_dir, n), read(&single.out_dir, n), "{n}");
    }
}

#[test]
fn holdout_scores_only_test_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(&dir.path().join("c"), 400, 4, 0.9);
    let mut cfg = config(&[("c", m)], dir.path().join("out"));
    cfg.protocol = Protocol::Holdout;
    cfg.gbdt.num_rounds = 40;
    let s = run_pipeline(&cfg).unwrap();
    let overall = s.overall.iter().find(|r| r.method == "GBDT").unwrap();
    assert!(overall.n_pos + overall.n_neg < 400);
    assert!(overall.n_pos + overall.n_neg > 0);
}

#[test]
fn missing_graph_is_reported_by_kind() {
    let dir = tempfile::tempdir().unwrap();
    let m = corpus(&dir.path().join("c"), 20, 4, 0.9);
    let victim = std::fs::read_dir(dir.path().join("c/graphs")).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(&victim).unwrap();
    let cfg = config(&[("c", m)], dir.path().join("out"));
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.kind(), "MissingInputError");
    assert!(matches!(&err, Error::MissingInput(p) if p == &victim), "{err:?} vs {victim:?}");
}

#[test]
fn config_survives_toml() {
    let mut cfg = config(&[("x", PathBuf::from("corpus/manifest.jsonl"))], PathBuf::from("o"));
    cfg.shuffle_labels = true;
    cfg.folds = 3;
    let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    assert!(RunConfig::from_toml("bogus = 1").is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let loaded = RunConfig::load(&path).unwrap();
    assert_eq!(loaded.corpora[0].manifest, dir.path().join("corpus/manifest.jsonl"));
}
