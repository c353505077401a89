use std::fs;
use std::path::Path;

use actsum_core::corpus::{extract_split, load_splits, ExtractOptions, TargetKind, TaskSpec};
use actsum_core::synthgen::{generate_corpus, GenConfig};
use actsum_models::{ModelKind, TrainConfig};
use actsum_pipeline::matrix::SCORE_COLUMNS;
use actsum_pipeline::{
    decode_dataset, oracle_plans, run_matrix, run_pipeline, run_stage2, train_task, ExperimentMatrixConfig, Preset, TrainOverride,
};

fn small_corpus(dir: &Path) {
    let gen = GenConfig { n_train: 40, n_valid_seen: 8, n_valid_unseen: 8, annotations_per_episode: 2, ..GenConfig::default() };
    generate_corpus(&gen, dir).unwrap();
}

fn quick() -> TrainConfig {
    TrainConfig { max_epochs: 1, max_decode_len: 30, ..Preset::Desk.train_config() }
}

#[test]
fn oracle_first_stage_matches_direct_route() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let splits = load_splits(dir.path()).unwrap();
    for (text_task, kind) in [("pddl2sum", TargetKind::Pddl), ("actions2inst", TargetKind::Actions)] {
        let spec: TaskSpec = text_task.parse().unwrap();
        let ckpt = train_task(&splits, spec, Preset::Desk.model_config(ModelKind::Text), &quick(), 1, false).unwrap();
        for eps in [&splits.valid_seen, &splits.valid_unseen] {
            let ds = extract_split(eps, spec, &ExtractOptions::default()).unwrap();
            let direct = decode_dataset(&ckpt, &ds).unwrap();
            let plans = oracle_plans(eps, kind, false).unwrap();
            let piped = run_stage2(&ckpt, eps, spec.target, &plans, false).unwrap();
            assert_eq!(direct, piped);
            assert!(!direct.is_empty());
        }
    }
}

#[test]
fn pipeline_checks_kinds_and_accepts_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let splits = load_splits(dir.path()).unwrap();
    let vision = train_task(&splits, "img2pddl".parse().unwrap(), Preset::Desk.model_config(ModelKind::Vision), &quick(), 1, false).unwrap();
    let text = train_task(&splits, "pddl2sum".parse().unwrap(), Preset::Desk.model_config(ModelKind::Text), &quick(), 1, false).unwrap();
    let actions = train_task(&splits, "actions2sum".parse().unwrap(), Preset::Desk.model_config(ModelKind::Text), &quick(), 1, false).unwrap();

    let out = run_pipeline(&vision, &text, &[], TargetKind::Summary, false, None).unwrap();
    assert!(out.texts.is_empty() && out.plans.plans.is_empty());

    assert!(run_pipeline(&vision, &actions, &splits.valid_seen, TargetKind::Summary, false, None).is_err());
    assert!(run_pipeline(&text, &text, &splits.valid_seen, TargetKind::Summary, false, None).is_err());
    assert!(run_pipeline(&vision, &text, &splits.valid_seen, TargetKind::Instructions, false, None).is_err());

    let audit = dir.path().join("audit");
    let out = run_pipeline(&vision, &text, &splits.valid_seen, TargetKind::Summary, false, Some(&audit)).unwrap();
    assert_eq!(out.plans.plans.len(), splits.valid_seen.len());
    assert_eq!(out.texts.len(), splits.valid_seen.iter().map(|e| e.annotations.len()).sum::<usize>());
    let reread = actsum_core::corpus::GenerationSource::load_dir(&audit).unwrap();
    assert_eq!(reread, out.plans);
}

#[test]
fn matrix_has_sixteen_rows_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    small_corpus(&corpus);
    let config = ExperimentMatrixConfig {
        corpus: corpus.clone(),
        output_dir: dir.path().join("out"),
        train: TrainOverride { max_epochs: Some(1), max_decode_len: Some(30), ..Default::default() },
        ..Default::default()
    };
    let first = run_matrix(&config).unwrap();
    assert_eq!(first.table.rows.len(), 16);
    assert_eq!(SCORE_COLUMNS.len(), 10);
    for r in &first.table.rows {
        assert!(r.error.is_none(), "{}: {:?}", r.task, r.error);
        assert!(r.values().unwrap().iter().all(|x| (0.0..=1.0).contains(x)));
    }
    let tsv = fs::read(config.output_dir.join("scores.tsv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&tsv).lines().count(), 18);
    let ckpt = fs::read(config.output_dir.join("models/img2pddl.ckpt")).unwrap();
    assert!(config.output_dir.join("genpddl2sum/plans/valid_seen").is_dir());
    assert_eq!(first.errors_unseen.rows.len(), 7);

    let second = run_matrix(&config).unwrap();
    assert_eq!(first, second);
    assert_eq!(fs::read(config.output_dir.join("scores.tsv")).unwrap(), tsv);
    assert_eq!(fs::read(config.output_dir.join("models/img2pddl.ckpt")).unwrap(), ckpt);
}

#[test]
fn gen_rows_must_name_a_matching_upstream() {
    let mut config = ExperimentMatrixConfig::default();
    config.rows[2].upstream = None;
    assert!(config.validate().is_err());
    let mut config = ExperimentMatrixConfig::default();
    config.rows[2].upstream = Some("img2actions".into());
    assert!(config.validate().is_err());
    let mut config = ExperimentMatrixConfig::default();
    config.rows[0].upstream = Some("img2pddl".into());
    assert!(config.validate().is_err());
    assert_eq!(ExperimentMatrixConfig::default().required_models().unwrap().len(), 12);
}
