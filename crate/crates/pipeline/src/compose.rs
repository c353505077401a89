//! Decoding of pair datasets and the two-stage frames → plan → text route.

use std::path::Path;

use actsum_core::corpus::{extract_split, ExtractOptions, GenerationSource, InputRepr, PairDataset, TargetKind, TaskSpec};
use actsum_core::trace::{canonicalize_high_pddl, simplify_low_actions};
use actsum_core::Episode;
use actsum_models::data::to_examples;
use actsum_models::{Checkpoint, DecodeMode, Source};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// One generated text with the reference it is scored against.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generated {
    pub episode_id: String,
    pub annotator_id: Option<String>,
    pub text: Vec<String>,
    pub reference: Vec<String>,
}

/// Inputs decoded together.
pub const DECODE_CHUNK: usize = 32;

pub fn checkpoint_task(ckpt: &Checkpoint) -> Result<TaskSpec> {
    ckpt.task
        .parse()
        .map_err(|e| PipelineError::domain(format!("checkpoint task {:?}: {e}", ckpt.task)))
}

/// Greedy outputs for every distinct input of `ds`, one entry per pair.
pub fn decode_dataset(ckpt: &Checkpoint, ds: &PairDataset) -> Result<Vec<Generated>> {
    decode_dataset_with(ckpt, ds, DecodeMode::Greedy, ckpt.max_decode_len())
}

pub fn decode_dataset_with(ckpt: &Checkpoint, ds: &PairDataset, mode: DecodeMode, max_len: usize) -> Result<Vec<Generated>> {
    let examples = to_examples(ds, ckpt.model.src_vocab.as_ref(), &ckpt.model.tgt_vocab)?;
    let sources: Vec<Source> = examples.iter().map(|e| e.source.clone()).collect();
    let outputs = match mode {
        DecodeMode::Greedy => ckpt.model.decode_all(&sources, max_len, DECODE_CHUNK)?,
        DecodeMode::Beam(_) => sources.iter().map(|s| ckpt.model.decode(s, mode, max_len)).collect::<std::result::Result<_, _>>()?,
    };
    Ok(ds
        .pairs
        .iter()
        .map(|p| Generated {
            episode_id: p.episode_id.clone(),
            annotator_id: p.annotator_id.clone(),
            text: ckpt.model.tgt_vocab.decode(&outputs[p.input_index]),
            reference: p.target.clone(),
        })
        .collect())
}

/// Stage one: plan text decoded from frames for every episode.
pub fn generate_plans(vision: &Checkpoint, episodes: &[Episode], opts: &ExtractOptions<'_>) -> Result<GenerationSource> {
    let spec = checkpoint_task(vision)?;
    if spec.input != InputRepr::Images || !spec.target.is_plan() {
        return Err(PipelineError::domain(format!("stage one needs an images-to-plan checkpoint, got {}", spec.id())));
    }
    let ds = extract_split(episodes, spec, &ExtractOptions { collapse_runs: opts.collapse_runs, generated: None })?;
    let mut plans = GenerationSource::default();
    for g in decode_dataset(vision, &ds)? {
        plans.insert(&g.episode_id, g.text);
    }
    Ok(plans)
}

/// Gold plan text, standing in for a perfect stage one.
pub fn oracle_plans(episodes: &[Episode], kind: TargetKind, collapse_runs: bool) -> Result<GenerationSource> {
    let mut plans = GenerationSource::default();
    for ep in episodes {
        let toks = match kind {
            TargetKind::Pddl => canonicalize_high_pddl(&ep.high_pddl)?,
            TargetKind::Actions => simplify_low_actions(&ep.low_actions, collapse_runs)?,
            other => return Err(PipelineError::domain(format!("{} is not a plan representation", other.name()))),
        };
        plans.insert(&ep.episode_id, toks);
    }
    Ok(plans)
}

/// Stage two: target text decoded from supplied plan text by a model
/// trained on gold plans of the same representation.
pub fn run_stage2(
    text: &Checkpoint,
    episodes: &[Episode],
    target: TargetKind,
    plans: &GenerationSource,
    collapse_runs: bool,
) -> Result<Vec<Generated>> {
    let spec = checkpoint_task(text)?;
    let input = match spec.input {
        InputRepr::Pddl => InputRepr::GenPddl,
        InputRepr::Actions => InputRepr::GenActions,
        _ => return Err(PipelineError::domain(format!("stage two needs a plan-to-text checkpoint, got {}", spec.id()))),
    };
    if spec.target != target {
        return Err(PipelineError::domain(format!(
            "stage two checkpoint produces {}, requested {}",
            spec.target.name(),
            target.name()
        )));
    }
    let gen = TaskSpec::new(input, target)?;
    let ds = extract_split(episodes, gen, &ExtractOptions { collapse_runs, generated: Some(plans) })?;
    decode_dataset(text, &ds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub plans: GenerationSource,
    pub texts: Vec<Generated>,
}

/// Frames → plan text → target text. When `audit_dir` is given the
/// intermediate plans are written there as `<episode_id>.txt`.
pub fn run_pipeline(
    vision: &Checkpoint,
    text: &Checkpoint,
    episodes: &[Episode],
    target: TargetKind,
    collapse_runs: bool,
    audit_dir: Option<&Path>,
) -> Result<PipelineOutput> {
    let v = checkpoint_task(vision)?;
    let t = checkpoint_task(text)?;
    if t.input.text_side() != Some(v.target) || t.input.uses_frames() {
        return Err(PipelineError::domain(format!(
            "checkpoint kind mismatch: stage one {} feeds {} but stage two {} reads {}",
            v.id(),
            v.target.name(),
            t.id(),
            t.input.name()
        )));
    }
    let plans = generate_plans(vision, episodes, &ExtractOptions { collapse_runs, generated: None })?;
    if let Some(dir) = audit_dir {
        plans.write_dir(dir)?;
    }
    let texts = run_stage2(text, episodes, target, &plans, collapse_runs)?;
    Ok(PipelineOutput { plans, texts })
}
