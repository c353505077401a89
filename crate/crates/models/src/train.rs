//! Adam training with gradient clipping, validation-based model selection
//! and early stopping.

use actsum_core::eval::rouge_l;
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::Example;
use crate::error::{ModelError, Result};
use crate::model::{Seq2Seq, Source};
use crate::tape::{Gradients, Mat, ParamStore, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean ROUGE-L F1 of greedy outputs on the validation set.
    pub valid_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
}

pub struct Adam {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Mat> = params.iter().map(|(_, p)| Mat::zeros(p.raw_dim())).collect();
        Adam { m: zeros.clone(), v: zeros, t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for id in params.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = params.get_mut(id);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            });
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Loss and gradients of one batch of examples.
pub fn batch_gradients(
    model: &Seq2Seq,
    batch: &[&Example],
    teacher_forcing: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Gradients)> {
    let sources: Vec<&Source> = batch.iter().map(|e| &e.source).collect();
    let mut rows = Vec::new();
    let mut targets: Vec<&[usize]> = Vec::new();
    for (i, e) in batch.iter().enumerate() {
        for t in &e.targets {
            rows.push(i);
            targets.push(t);
        }
    }
    let mut tape = Tape::new(&model.params);
    let loss = model.loss(&mut tape, &sources, &rows, &targets, teacher_forcing, rng)?;
    let value = tape.value(loss)[[0, 0]];
    Ok((value, tape.backward(loss)))
}

/// Mean ROUGE-L F1 of greedy outputs against every target of each example.
pub fn validation_metric(model: &Seq2Seq, valid: &[Example], max_len: usize, chunk: usize) -> Result<f64> {
    let sources: Vec<Source> = valid.iter().map(|e| e.source.clone()).collect();
    let outputs = model.decode_all(&sources, max_len, chunk)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (e, out) in valid.iter().zip(&outputs) {
        for t in &e.targets {
            sum += rouge_l(out, std::slice::from_ref(t)).f1;
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Train in place; the parameters of the best validation epoch are kept.
pub fn train(model: &mut Seq2Seq, train: &[Example], valid: &[Example], cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if train.iter().all(|e| e.targets.is_empty()) {
        return Err(ModelError::domain("no training pairs"));
    }
    let mut adam = Adam::new(&model.params);
    let mut history = History::default();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, epoch as u64));
        let mut losses = Vec::new();
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut members = chunk.to_vec();
            members.sort_unstable();
            let batch: Vec<&Example> = members.iter().map(|&i| &train[i]).filter(|e| !e.targets.is_empty()).collect();
            if batch.is_empty() {
                continue;
            }
            let mut drng = stream_rng(cfg.seed ^ 0x5eed, ((epoch as u64) << 32) | bi as u64);
            let (loss, mut grads) = batch_gradients(model, &batch, cfg.teacher_forcing, Some(&mut drng))?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: bi, first_input: chunk[0] });
            }
            let norm = grads.global_norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            adam.step(&mut model.params, &grads, cfg.learning_rate);
            losses.push(loss);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        let valid_metric = if valid.is_empty() {
            None
        } else {
            Some(validation_metric(model, valid, cfg.max_decode_len, cfg.decode_chunk)?)
        };
        info!("epoch {epoch}: loss {train_loss:.5} valid {valid_metric:?}");
        history.epochs.push(EpochRecord { epoch, train_loss, valid_metric });
        let Some(metric) = valid_metric else {
            history.best_epoch = Some(epoch);
            continue;
        };
        if best.as_ref().is_none_or(|(b, _, _)| metric > *b) {
            best = Some((metric, epoch, model.params.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if metric >= 1.0 || epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    if let Some((_, epoch, params)) = best {
        model.params = params;
        history.best_epoch = Some(epoch);
    }
    Ok(history)
}

/// Teacher-forced token accuracy over every pair of `examples`.
pub fn token_accuracy(model: &Seq2Seq, examples: &[Example]) -> Result<f64> {
    let (mut hit, mut n) = (0.0, 0usize);
    for chunk in examples.chunks(32) {
        let sources: Vec<&Source> = chunk.iter().map(|e| &e.source).collect();
        let mut rows = Vec::new();
        let mut targets: Vec<&[usize]> = Vec::new();
        for (i, e) in chunk.iter().enumerate() {
            for t in &e.targets {
                rows.push(i);
                targets.push(t);
            }
        }
        if targets.is_empty() {
            continue;
        }
        let count: usize = targets.iter().map(|t| t.len() + 1).sum();
        hit += model.token_accuracy(&sources, &rows, &targets)? * count as f64;
        n += count;
    }
    Ok(if n == 0 { 1.0 } else { hit / n as f64 })
}
