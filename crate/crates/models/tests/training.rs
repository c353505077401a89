use std::time::Instant;

use actsum_core::corpus::{extract_split, ExtractOptions, TaskSpec};
use actsum_core::synthgen::{generate_splits, GenConfig};
use actsum_models::data::{build_vocabs, model_kind_for, to_examples, Example};
use actsum_models::train::{token_accuracy, train};
use actsum_models::{DecodeMode, ModelConfig, Seq2Seq, TrainConfig};

fn overfit_set(task: &str) -> (ModelConfig, Seq2Seq, Vec<Example>) {
    let gen = GenConfig { n_train: 8, n_valid_seen: 1, n_valid_unseen: 1, annotations_per_episode: 1, ..GenConfig::default() };
    let (splits, _) = generate_splits(&gen).unwrap();
    let spec: TaskSpec = task.parse().unwrap();
    let ds = extract_split(&splits.train, spec, &ExtractOptions::default()).unwrap();
    let (src, tgt) = build_vocabs(&ds, 1);
    let examples = to_examples(&ds, src.as_ref(), &tgt).unwrap();
    assert_eq!(examples.len(), 8);
    let config = ModelConfig::desk(model_kind_for(&spec)).with_dropout(0.0);
    let model = Seq2Seq::new(config.clone(), src, tgt, 3).unwrap();
    (config, model, examples)
}

fn overfit_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { learning_rate: 5e-3, batch_size: 8, max_epochs: epochs, patience: epochs, ..TrainConfig::default() }
}

fn check_overfit(task: &str) {
    let (_, mut model, examples) = overfit_set(task);
    let start = Instant::now();
    let history = train(&mut model, &examples, &examples, &overfit_cfg(200)).unwrap();
    let acc = token_accuracy(&model, &examples).unwrap();
    eprintln!("{task}: {} epochs, accuracy {acc:.4}, {:.1}s", history.epochs.len(), start.elapsed().as_secs_f64());
    assert!(acc >= 0.99, "{task}: token accuracy {acc}");
    assert!(history.epochs.len() <= 200);
    for e in &examples {
        let out = model.decode(&e.source, DecodeMode::Greedy, 80).unwrap();
        assert_eq!(out, e.targets[0], "{task}: memorized output differs for {}", e.episode_id);
    }
}

#[test]
fn pddl_to_summary_overfits() {
    check_overfit("pddl2sum");
}

#[test]
fn frames_to_pddl_overfits() {
    check_overfit("img2pddl");
}

#[test]
fn overfit_loss_is_non_increasing_after_epoch_ten() {
    let (_, mut model, examples) = overfit_set("pddl2sum");
    let history = train(&mut model, &examples, &[], &overfit_cfg(40)).unwrap();
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.train_loss).collect();
    for w in losses[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "loss rose: {losses:?}");
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let (_, mut model, examples) = overfit_set("pddl2sum");
    let before = model.params.clone();
    let cfg = TrainConfig { learning_rate: 0.0, ..overfit_cfg(3) };
    let history = train(&mut model, &examples, &[], &cfg).unwrap();
    assert_eq!(model.params, before);
    let l0 = history.epochs[0].train_loss;
    assert!(history.epochs.iter().all(|e| e.train_loss == l0));
}

#[test]
fn training_is_deterministic() {
    let run = |task: &str| {
        let (config, _, examples) = overfit_set(task);
        let (_, fresh, _) = overfit_set(task);
        let mut model = Seq2Seq::new(config.with_dropout(0.1), fresh.src_vocab.clone(), fresh.tgt_vocab.clone(), 3).unwrap();
        let h = train(&mut model, &examples, &examples[..2], &overfit_cfg(3)).unwrap();
        (h, model.params)
    };
    for task in ["pddl2sum", "img2sum", "imgpddl2sum"] {
        let (h1, p1) = run(task);
        let (h2, p2) = run(task);
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert_eq!(h1.epochs.last().unwrap().train_loss.to_bits(), h2.epochs.last().unwrap().train_loss.to_bits());
    }
}
