//! Conversion of corpus pairs into model inputs grouped by shared source.

use std::sync::Arc;

use actsum_core::corpus::{InputRepr, PairDataset, TaskSpec};

use crate::config::ModelKind;
use crate::error::Result;
use crate::model::Source;
use crate::vocab::Vocab;

/// One distinct input with every target paired with it.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub source: Source,
    pub targets: Vec<Vec<usize>>,
    pub episode_id: String,
}

/// Which model family serves a task.
pub fn model_kind_for(spec: &TaskSpec) -> ModelKind {
    match spec.input {
        InputRepr::Images => ModelKind::Vision,
        InputRepr::ImagesPddl | InputRepr::ImagesActions => ModelKind::Multimodal,
        InputRepr::Pddl | InputRepr::Actions | InputRepr::GenPddl | InputRepr::GenActions => ModelKind::Text,
    }
}

/// Source vocabulary (if the task has a token input) and target vocabulary.
pub fn build_vocabs(ds: &PairDataset, min_freq: usize) -> (Option<Vocab>, Vocab) {
    let mut inputs = Vec::new();
    let mut last = None;
    for p in &ds.pairs {
        if last != Some(p.input_index) {
            if let Some(t) = &p.input.tokens {
                inputs.push(t.clone());
            }
            last = Some(p.input_index);
        }
    }
    let src = (!inputs.is_empty()).then(|| Vocab::build(&inputs, min_freq));
    let targets: Vec<Vec<String>> = ds.pairs.iter().map(|p| p.target.clone()).collect();
    (src, Vocab::build(&targets, min_freq))
}

/// Group pairs by `input_index`, encoding tokens with the given vocabularies.
/// Frames are loaded here.
pub fn to_examples(ds: &PairDataset, src: Option<&Vocab>, tgt: &Vocab) -> Result<Vec<Example>> {
    let mut out: Vec<Example> = Vec::new();
    let mut last = None;
    for p in &ds.pairs {
        if last != Some(p.input_index) {
            let tokens = match (src, &p.input.tokens) {
                (Some(v), Some(t)) => Some(v.encode(t)),
                _ => None,
            };
            let frames = match &p.input.frames {
                Some(f) => Some(Arc::clone(&f.grids()?)),
                None => None,
            };
            out.push(Example { source: Source { tokens, frames }, targets: Vec::new(), episode_id: p.episode_id.clone() });
            last = Some(p.input_index);
        }
        out.last_mut().expect("pushed above").targets.push(tgt.encode(&p.target));
    }
    Ok(out)
}
