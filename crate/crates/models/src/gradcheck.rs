//! Finite-difference verification of the analytic gradients.

use std::sync::Arc;

use actsum_core::FeatureGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{FusionConfig, ModelConfig, ModelKind, TransducerConfig, VisionConfig};
use crate::error::{ModelError, Result};
use crate::model::{Seq2Seq, Source};
use crate::tape::Tape;
use crate::vocab::Vocab;

pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter entry with the largest error, as `name[row,col]`.
    pub worst: String,
    pub checked: usize,
}

/// Small configurations (every dim ≤ 8) with the full layer structure.
pub fn small_config(kind: ModelKind) -> ModelConfig {
    let text = TransducerConfig { embed_dim: 4, hidden_dim: 4, encoder_layers: 3, bidirectional: true, dropout: 0.1, ..TransducerConfig::desk() };
    let vision = VisionConfig {
        in_channels: 4,
        height: 2,
        width: 2,
        conv1_out: 3,
        conv2_out: 2,
        kernel: 1,
        encoder_hidden: 4,
        encoder_layers: 3,
        bidirectional: true,
        decoder_hidden: 4,
        embed_dim: 4,
        dropout: 0.1,
    };
    match kind {
        ModelKind::Text => ModelConfig::Text(text),
        ModelKind::Vision => ModelConfig::Vision(vision),
        ModelKind::Multimodal => ModelConfig::Multimodal(FusionConfig { vision, text: TransducerConfig { hidden_dim: 3, ..text } }),
    }
}

fn check_small(config: &ModelConfig) -> Result<()> {
    let mut dims = vec![config.decoder_hidden(), config.decoder_embed()];
    let text = |t: &TransducerConfig| vec![t.embed_dim, t.hidden_dim];
    let vision = |v: &VisionConfig| vec![v.in_channels, v.height * v.width, v.conv1_out, v.conv2_out, v.encoder_hidden];
    match config {
        ModelConfig::Text(t) => dims.extend(text(t)),
        ModelConfig::Vision(v) => dims.extend(vision(v)),
        ModelConfig::Multimodal(f) => {
            dims.extend(text(&f.text));
            dims.extend(vision(&f.vision));
        }
    }
    if dims.iter().any(|&d| d > 8) {
        return Err(ModelError::domain("grad_check needs every dim <= 8"));
    }
    Ok(())
}

/// A fixed random batch: three sources of different lengths, four targets
/// including an empty one.
pub fn probe_batch(config: &ModelConfig, seed: u64) -> (Option<Vocab>, Vocab, Vec<Source>, Vec<usize>, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let src_vocab = Vocab::build(&[vec!["a", "b", "c", "d", "e"]], 1);
    let tgt_vocab = Vocab::build(&[vec!["u", "v", "w", "x"]], 1);
    let lens = [4usize, 2, 3];
    let kind = config.kind();
    let sources = lens
        .iter()
        .map(|&n| {
            let tokens = (kind != ModelKind::Vision).then(|| (0..n).map(|_| rng.random_range(3..src_vocab.len())).collect());
            let frames = match config {
                ModelConfig::Vision(v) | ModelConfig::Multimodal(FusionConfig { vision: v, .. }) => {
                    let m = n + 1;
                    Some(Arc::new(
                        (0..m)
                            .map(|_| {
                                let len = v.in_channels * v.height * v.width;
                                FeatureGrid::new(v.in_channels, v.height, v.width, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
                                    .expect("finite values")
                            })
                            .collect(),
                    ))
                }
                ModelConfig::Text(_) => None,
            };
            Source { tokens, frames }
        })
        .collect();
    let rows = vec![0, 1, 2, 0];
    let targets = vec![vec![4, 5, 6], vec![7], vec![], vec![6, 6, 4, 3]];
    let src_vocab = (kind != ModelKind::Vision).then_some(src_vocab);
    (src_vocab, tgt_vocab, sources, rows, targets)
}

/// Maximum relative error between analytic gradients and central finite
/// differences over every parameter entry, with dropout active under a
/// fixed mask.
pub fn grad_check(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    check_small(config)?;
    let (sv, tv, sources, rows, targets) = probe_batch(config, seed);
    let mut model = Seq2Seq::new(config.clone(), sv, tv, seed)?;
    let srcs: Vec<&Source> = sources.iter().collect();
    let tgts: Vec<&[usize]> = targets.iter().map(Vec::as_slice).collect();
    let mask_seed = seed.wrapping_add(99);
    let loss_of = |m: &Seq2Seq| -> Result<(f64, Option<crate::tape::Gradients>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let mut tape = Tape::new(&m.params);
        let l = m.loss(&mut tape, &srcs, &rows, &tgts, 1.0, Some(&mut rng))?;
        Ok((tape.value(l)[[0, 0]], None))
    };
    let analytic = {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let mut tape = Tape::new(&model.params);
        let l = model.loss(&mut tape, &srcs, &rows, &tgts, 1.0, Some(&mut rng))?;
        tape.backward(l)
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: String::new(), checked: 0 };
    for id in model.params.ids().collect::<Vec<_>>() {
        let (r, c) = model.params.get(id).dim();
        for i in 0..r {
            for j in 0..c {
                let orig = model.params.get(id)[[i, j]];
                model.params.get_mut(id)[[i, j]] = orig + STEP;
                let up = loss_of(&model)?.0;
                model.params.get_mut(id)[[i, j]] = orig - STEP;
                let down = loss_of(&model)?.0;
                model.params.get_mut(id)[[i, j]] = orig;
                let num = (up - down) / (2.0 * STEP);
                let a = analytic.get(id).map_or(0.0, |g| g[[i, j]]);
                let rel = (a - num).abs() / a.abs().max(num.abs()).max(REL_FLOOR);
                report.checked += 1;
                if rel > report.max_rel_error || report.worst.is_empty() {
                    report.max_rel_error = rel;
                    report.worst = format!("{}[{i},{j}]", model.params.name(id));
                }
            }
        }
    }
    Ok(report)
}
