use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use actsum_core::corpus::{dedup_validation, extract_split, load_splits, write_splits, ExtractOptions, Split, SplitSet, TaskSpec};
use actsum_core::eval::{error_table, score_corpus, Scores, METRIC_SETTINGS};
use actsum_core::synthgen::{generate_corpus, load_lexicon};
use actsum_models::data::model_kind_for;
use actsum_models::{Checkpoint, DecodeMode};
use actsum_pipeline::compose::{checkpoint_task, run_stage2};
use actsum_pipeline::dump::{read_dump, write_dump};
use actsum_pipeline::matrix::label_errors;
use actsum_pipeline::{decode_dataset_with, oracle_plans, run_matrix, run_pipeline, train_task, Generated};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use crate::config::RunConfig;
use crate::manifest::{manifest_for_file, write_atomic, DirLock, RunManifest, MANIFEST_NAME};

#[derive(Parser, Debug)]
#[command(name = "actsum", version, about = "Robot action summarization: corpora, models, pipelines and scoring")]
pub struct Cli {
    /// Log filter for standard error (overridden by RUST_LOG).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArg {
    /// Preset name (desk, paper) or TOML/JSON config file; defaults to
    /// $ACTSUM_CONFIG, then desk.
    #[arg(long)]
    pub config: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus.
    GenCorpus {
        /// Corpus directory to create.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        /// Generator seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Training episodes.
        #[arg(long)]
        n_train: Option<usize>,
        /// Validation episodes in training environments.
        #[arg(long)]
        n_valid_seen: Option<usize>,
        /// Validation episodes in held-out environments.
        #[arg(long)]
        n_valid_unseen: Option<usize>,
        /// Annotations per episode.
        #[arg(long)]
        annotations: Option<usize>,
        /// Validation episodes that copy a training plan.
        #[arg(long)]
        planted_duplicates: Option<usize>,
    },
    /// Load and validate a split manifest directory.
    Ingest {
        /// Directory holding train/, valid_seen/ and valid_unseen/.
        #[arg(long)]
        splits: PathBuf,
        /// Write the split statistics as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Remove validation annotations whose plan occurs in train.
    Dedup {
        /// Directory holding train/, valid_seen/ and valid_unseen/.
        #[arg(long)]
        splits: PathBuf,
        /// Write the deduplicated split set here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the model for one task.
    Train {
        /// Task id, e.g. pddl2sum or img2pddl.
        #[arg(long)]
        task: String,
        /// Corpus directory; defaults to the config's matrix corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        /// Training and initialisation seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Maximum epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Adam learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Distinct inputs per batch.
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Decode one split with a checkpoint and write a generation dump.
    Decode {
        /// Checkpoint written by train or matrix.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus directory (validation splits are deduplicated first).
        #[arg(long)]
        corpus: PathBuf,
        /// train, valid_seen or valid_unseen.
        #[arg(long, default_value = "valid_seen")]
        split: String,
        /// Generation dump (TSV) to write.
        #[arg(long)]
        out: PathBuf,
        /// Beam width; greedy when absent.
        #[arg(long)]
        beam: Option<usize>,
        /// Decode length cap; defaults to the checkpoint's.
        #[arg(long)]
        max_len: Option<usize>,
        /// Collapse repeated navigation actions; must match training.
        #[arg(long)]
        collapse_runs: bool,
    },
    /// Frames → plan → text with two checkpoints.
    Pipeline {
        /// Images-to-plan checkpoint (not needed with --oracle).
        #[arg(long)]
        vision: Option<PathBuf>,
        /// Plan-to-text checkpoint.
        #[arg(long)]
        text: PathBuf,
        /// Corpus directory (validation splits are deduplicated first).
        #[arg(long)]
        corpus: PathBuf,
        /// train, valid_seen or valid_unseen.
        #[arg(long, default_value = "valid_seen")]
        split: String,
        /// Output directory for the dump and intermediate plans.
        #[arg(long)]
        out: PathBuf,
        /// Substitute gold plans for the first stage.
        #[arg(long)]
        oracle: bool,
        /// Collapse repeated navigation actions; must match training.
        #[arg(long)]
        collapse_runs: bool,
    },
    /// Train and evaluate every row of the experiment matrix.
    Matrix {
        #[command(flatten)]
        config: ConfigArg,
        /// Overrides the config's corpus directory.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a generation dump.
    Score {
        /// Generation dump to score.
        #[arg(long)]
        dump: PathBuf,
        /// Write the score row as TSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label summary dumps with the error taxonomy.
    ErrorReport {
        /// Corpus providing the gold slots.
        #[arg(long)]
        corpus: PathBuf,
        /// One or more summary dumps.
        #[arg(long, required = true, num_args = 1..)]
        dump: Vec<PathBuf>,
        /// Write the report as TSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let start = Instant::now();
    match cli.command {
        Command::GenCorpus { out, config, seed, n_train, n_valid_seen, n_valid_unseen, annotations, planted_duplicates } => {
            let (mut cfg, _) = RunConfig::resolve(config.config.as_deref())?;
            let g = &mut cfg.gen;
            macro_rules! set {
                ($($flag:ident => $field:ident),*) => { $( if let Some(v) = $flag { g.$field = v; } )* };
            }
            set!(seed => seed, n_train => n_train, n_valid_seen => n_valid_seen, n_valid_unseen => n_valid_unseen,
                 annotations => annotations_per_episode, planted_duplicates => planted_duplicates);
            g.validate()?;
            let _lock = DirLock::acquire(&out)?;
            let (splits, report) = generate_corpus(&cfg.gen, &out)?;
            println!(
                "generated {} train / {} valid_seen / {} valid_unseen episodes ({} planted duplicates)",
                splits.train.len(),
                splits.valid_seen.len(),
                splits.valid_unseen.len(),
                report.planted_episodes.len()
            );
            let mut m = RunManifest::new("gen-corpus", serde_json::to_value(&cfg.gen)?, Some(cfg.gen.seed));
            m.output(&out)?;
            finish(m, &out.join(MANIFEST_NAME), start)
        }
        Command::Ingest { splits, out } => {
            let s = load_splits(&splits)?;
            let stats = split_stats(&s);
            for row in &stats {
                println!("{:<13} {:>6} episodes {:>6} annotations {:>3} environments", row.0, row.1, row.2, row.3);
            }
            if let Some(out) = out {
                let dir = parent_dir(&out);
                let _lock = DirLock::acquire(&dir)?;
                let json: Vec<_> = stats
                    .iter()
                    .map(|r| serde_json::json!({"split": r.0, "episodes": r.1, "annotations": r.2, "environments": r.3}))
                    .collect();
                write_atomic(&out, &(serde_json::to_string_pretty(&json)? + "\n").into_bytes())?;
                let mut m = RunManifest::new("ingest", serde_json::Value::Null, None);
                m.input(&splits)?;
                m.output(&out)?;
                finish(m, &manifest_for_file(&out), start)?;
            }
            Ok(())
        }
        Command::Dedup { splits, out } => {
            let (deduped, report) = dedup_validation(load_splits(&splits)?);
            println!("{report}");
            if let Some(out) = out {
                let _lock = DirLock::acquire(&out)?;
                write_splits(&out, &deduped)?;
                let lex = splits.join("lexicon.json");
                if lex.exists() {
                    fs::copy(&lex, out.join("lexicon.json"))?;
                }
                write_atomic(&out.join("dedup.json"), &(serde_json::to_string_pretty(&report)? + "\n").into_bytes())?;
                let mut m = RunManifest::new("dedup", serde_json::to_value(&report)?, None);
                m.input(&splits)?;
                m.output(&out)?;
                finish(m, &out.join(MANIFEST_NAME), start)?;
            }
            Ok(())
        }
        Command::Train { task, corpus, out, config, seed, epochs, lr, batch_size } => {
            let (cfg, _) = RunConfig::resolve(config.config.as_deref())?;
            let spec: TaskSpec = task.parse()?;
            let corpus = corpus.unwrap_or_else(|| cfg.matrix.corpus.clone());
            let mut tc = cfg.matrix.train_config(&spec.id());
            if let Some(v) = seed {
                tc.seed = v;
            }
            if let Some(v) = epochs {
                tc.max_epochs = v;
            }
            if let Some(v) = lr {
                tc.learning_rate = v;
            }
            if let Some(v) = batch_size {
                tc.batch_size = v;
            }
            let model = cfg.preset.model_config(model_kind_for(&spec));
            let (splits, _) = dedup_validation(load_splits(&corpus)?);
            let _lock = DirLock::acquire(&parent_dir(&out))?;
            let ckpt = train_task(&splits, spec, model, &tc, cfg.matrix.min_freq, cfg.matrix.collapse_runs)?;
            ckpt.save(&out)?;
            let last = ckpt.history.epochs.last().ok_or_else(|| anyhow!("no epochs were run"))?;
            println!(
                "{}: {} epochs, final loss {:.4}, best epoch {:?}, {} parameters",
                spec.id(),
                ckpt.history.epochs.len(),
                last.train_loss,
                ckpt.history.best_epoch,
                ckpt.model.num_parameters()
            );
            let snapshot = serde_json::json!({ "model": ckpt.model.config, "train": tc, "preset": cfg.preset });
            let mut m = RunManifest::new("train", snapshot, Some(tc.seed));
            m.input(&corpus)?;
            m.output(&out)?;
            finish(m, &manifest_for_file(&out), start)
        }
        Command::Decode { checkpoint, corpus, split, out, beam, max_len, collapse_runs } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let spec = checkpoint_task(&ckpt)?;
            let split = parse_split(&split)?;
            let (splits, _) = dedup_validation(load_splits(&corpus)?);
            let ds = extract_split(splits.split(split), spec, &ExtractOptions { collapse_runs, generated: None })?;
            let mode = match beam {
                Some(k) => DecodeMode::Beam(k),
                None => DecodeMode::Greedy,
            };
            let max_len = max_len.unwrap_or(ckpt.max_decode_len());
            let _lock = DirLock::acquire(&parent_dir(&out))?;
            let gens = decode_dataset_with(&ckpt, &ds, mode, max_len)?;
            write_dump(&out, &gens)?;
            print_scores(&spec.id(), &scores_of(&gens));
            let snapshot = serde_json::json!({ "task": spec.id(), "split": split.name(), "mode": format!("{mode:?}"), "max_len": max_len, "collapse_runs": collapse_runs });
            let mut m = RunManifest::new("decode", snapshot, None);
            m.input(&checkpoint)?;
            m.input(&corpus)?;
            m.output(&out)?;
            finish(m, &manifest_for_file(&out), start)
        }
        Command::Pipeline { vision, text, corpus, split, out, oracle, collapse_runs } => {
            let text_ckpt = Checkpoint::load(&text)?;
            let text_spec = checkpoint_task(&text_ckpt)?;
            let split = parse_split(&split)?;
            let (splits, _) = dedup_validation(load_splits(&corpus)?);
            let episodes = splits.split(split);
            let _lock = DirLock::acquire(&out)?;
            let plans_dir = out.join("plans");
            let gens = if oracle {
                let kind = text_spec
                    .input
                    .text_side()
                    .filter(|_| !text_spec.input.uses_frames())
                    .ok_or_else(|| anyhow!("text checkpoint {} does not read plan text", text_spec.id()))?;
                let plans = oracle_plans(episodes, kind, collapse_runs)?;
                plans.write_dir(&plans_dir)?;
                run_stage2(&text_ckpt, episodes, text_spec.target, &plans, collapse_runs)?
            } else {
                let vision = vision.as_ref().ok_or_else(|| anyhow!("--vision is required unless --oracle is given"))?;
                let vision_ckpt = Checkpoint::load(vision)?;
                run_pipeline(&vision_ckpt, &text_ckpt, episodes, text_spec.target, collapse_runs, Some(&plans_dir))?.texts
            };
            let dump = out.join(format!("{}.tsv", split.name()));
            write_dump(&dump, &gens)?;
            print_scores(&text_spec.id(), &scores_of(&gens));
            let snapshot = serde_json::json!({ "text_task": text_spec.id(), "split": split.name(), "oracle": oracle, "collapse_runs": collapse_runs });
            let mut m = RunManifest::new("pipeline", snapshot, None);
            if let Some(v) = &vision {
                m.input(v)?;
            }
            m.input(&text)?;
            m.input(&corpus)?;
            m.output(&out)?;
            finish(m, &out.join(MANIFEST_NAME), start)
        }
        Command::Matrix { config, corpus, out } => {
            let (mut cfg, _) = RunConfig::resolve(config.config.as_deref())?;
            if let Some(c) = corpus {
                cfg.matrix.corpus = c;
            }
            if let Some(o) = out {
                cfg.matrix.output_dir = o;
            }
            let _lock = DirLock::acquire(&cfg.matrix.output_dir)?;
            let outcome = run_matrix(&cfg.matrix)?;
            println!("{}", outcome.table);
            println!("error analysis, valid_seen\n{}", outcome.errors_seen);
            println!("error analysis, valid_unseen\n{}", outcome.errors_unseen);
            let mut m = RunManifest::new("matrix", serde_json::to_value(&cfg.matrix)?, cfg.matrix.train_config("pddl2sum").seed.into());
            m.input(&cfg.matrix.corpus)?;
            for p in &outcome.outputs {
                m.output(&cfg.matrix.output_dir.join(p))?;
            }
            finish(m, &cfg.matrix.output_dir.join(MANIFEST_NAME), start)?;
            let failed: Vec<&str> = outcome.table.rows.iter().filter(|r| r.error.is_some()).map(|r| r.task.as_str()).collect();
            if !failed.is_empty() {
                bail!("{} matrix rows failed: {}", failed.len(), failed.join(", "));
            }
            Ok(())
        }
        Command::Score { dump, out } => {
            let gens = read_dump(&dump)?;
            let s = scores_of(&gens);
            print_scores(&dump.display().to_string(), &s);
            if let Some(out) = out {
                let body = format!(
                    "# {METRIC_SETTINGS}\nr1\tr2\trl\tbleu\tbleu1\n{}\n",
                    s.as_array().iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join("\t")
                );
                write_atomic(&out, body.as_bytes())?;
                let mut m = RunManifest::new("score", serde_json::Value::Null, None);
                m.input(&dump)?;
                m.output(&out)?;
                finish(m, &manifest_for_file(&out), start)?;
            }
            Ok(())
        }
        Command::ErrorReport { corpus, dump, out } => {
            let splits = load_splits(&corpus)?;
            let lexicon = load_lexicon(&corpus).context("error labels need the corpus lexicon.json")?;
            let episodes: Vec<_> = splits.iter().cloned().collect();
            let mut rows = Vec::new();
            for d in &dump {
                let labels = label_errors(&read_dump(d)?, &episodes, &lexicon);
                if labels.is_empty() {
                    bail!("{}: no generated texts with gold slots", d.display());
                }
                rows.push((dump_name(d), labels));
            }
            let report = error_table(&rows);
            println!("{report}");
            if let Some(out) = out {
                write_atomic(&out, report.to_tsv().as_bytes())?;
                let mut m = RunManifest::new("error-report", serde_json::Value::Null, None);
                m.input(&corpus)?;
                for d in &dump {
                    m.input(d)?;
                }
                m.output(&out)?;
                finish(m, &manifest_for_file(&out), start)?;
            }
            Ok(())
        }
    }
}

fn finish(mut m: RunManifest, path: &Path, start: Instant) -> Result<()> {
    m.wall_clock_seconds = start.elapsed().as_secs_f64();
    m.write(path)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "valid_seen" => Ok(Split::ValidSeen),
        "valid_unseen" => Ok(Split::ValidUnseen),
        other => bail!("unknown split {other:?} (train, valid_seen, valid_unseen)"),
    }
}

fn split_stats(s: &SplitSet) -> Vec<(&'static str, usize, usize, usize)> {
    [Split::Train, Split::ValidSeen, Split::ValidUnseen]
        .into_iter()
        .map(|sp| {
            let eps = s.split(sp);
            let envs: std::collections::BTreeSet<_> = eps.iter().map(|e| &e.environment_id).collect();
            (sp.name(), eps.len(), eps.iter().map(|e| e.annotations.len()).sum(), envs.len())
        })
        .collect()
}

fn scores_of(gens: &[Generated]) -> Scores {
    let c: Vec<Vec<String>> = gens.iter().map(|g| g.text.clone()).collect();
    let r: Vec<Vec<String>> = gens.iter().map(|g| g.reference.clone()).collect();
    score_corpus(&c, &r)
}

fn print_scores(name: &str, s: &Scores) {
    println!("{METRIC_SETTINGS}");
    println!("{:<24} {:>6} {:>6} {:>6} {:>6} {:>6}", "", "R-1", "R-2", "R-L", "Bleu", "Bleu-1");
    let v = s.as_array();
    println!("{:<24} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3}", name, v[0], v[1], v[2], v[3], v[4]);
}

/// `<parent dir>/<file stem>`, e.g. `img2sum/valid_seen`.
fn dump_name(p: &Path) -> String {
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("dump");
    match p.parent().and_then(|d| d.file_name()).and_then(|s| s.to_str()) {
        Some(parent) => format!("{parent}/{stem}"),
        None => stem.to_string(),
    }
}
