//! Attention encoder-decoder over token sequences, frame sequences, or both.
//!
//! Sequences are stacked time-major: row `t·B + b` holds step `t` of batch
//! item `b`. Padding never mixes into real positions: recurrent states are
//! held by row selection and attention and pooling only visit `t < len`.

use std::sync::Arc;

use actsum_core::FeatureGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{ModelConfig, ModelKind, TransducerConfig, VisionConfig};
use crate::error::{ModelError, Result};
use crate::tape::{Mat, ParamId, ParamStore, Tape, Var};
use crate::vocab::{Vocab, END, PAD, START};

/// One model input: source tokens, frames, or both.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Source {
    pub tokens: Option<Vec<usize>>,
    pub frames: Option<Arc<Vec<FeatureGrid>>>,
}

impl Source {
    pub fn tokens(ids: Vec<usize>) -> Self {
        Source { tokens: Some(ids), frames: None }
    }

    pub fn frames(frames: Arc<Vec<FeatureGrid>>) -> Self {
        Source { tokens: None, frames: Some(frames) }
    }
}

#[derive(Clone, Copy, Debug)]
struct GruIds {
    wi: ParamId,
    bi: ParamId,
    wh: ParamId,
    bh: ParamId,
}

#[derive(Clone, Debug)]
struct EncoderIds {
    layers: Vec<Vec<GruIds>>,
    proj_w: ParamId,
    proj_b: ParamId,
}

#[derive(Clone, Debug)]
struct ConvIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct Ids {
    text: Option<(ParamId, EncoderIds)>,
    image: Option<(ConvIds, EncoderIds)>,
    dec_emb: ParamId,
    dec: GruIds,
    bridge_w: ParamId,
    bridge_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// Parameter initializer: uniform(±1/√fan) for recurrent and linear
/// weights, standard normal for embeddings.
struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, rows: usize, cols: usize, fan: usize) -> Mat {
        let k = 1.0 / (fan as f64).sqrt();
        Mat::from_shape_fn((rows, cols), |_| self.rng.random_range(-k..k))
    }

    fn normal(&mut self, rows: usize, cols: usize) -> Mat {
        Mat::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut self.rng))
    }
}

fn add_gru(store: &mut ParamStore, init: &mut Init, prefix: &str, input: usize, hidden: usize) -> GruIds {
    GruIds {
        wi: store.add(&format!("{prefix}.wi"), init.uniform(input, 3 * hidden, hidden)),
        bi: store.add(&format!("{prefix}.bi"), init.uniform(1, 3 * hidden, hidden)),
        wh: store.add(&format!("{prefix}.wh"), init.uniform(hidden, 3 * hidden, hidden)),
        bh: store.add(&format!("{prefix}.bh"), init.uniform(1, 3 * hidden, hidden)),
    }
}

fn add_linear(store: &mut ParamStore, init: &mut Init, prefix: &str, input: usize, output: usize) -> (ParamId, ParamId) {
    (
        store.add(&format!("{prefix}.w"), init.uniform(input, output, input)),
        store.add(&format!("{prefix}.b"), init.uniform(1, output, input)),
    )
}

fn add_encoder(
    store: &mut ParamStore,
    init: &mut Init,
    prefix: &str,
    input: usize,
    hidden: usize,
    layers: usize,
    dirs: usize,
    proj_out: usize,
) -> EncoderIds {
    let mut ls = Vec::new();
    for l in 0..layers {
        let din = if l == 0 { input } else { dirs * hidden };
        ls.push((0..dirs).map(|d| add_gru(store, init, &format!("{prefix}.l{l}.{}", ["fwd", "bwd"][d]), din, hidden)).collect());
    }
    let (proj_w, proj_b) = add_linear(store, init, &format!("{prefix}.proj"), dirs * hidden, proj_out);
    EncoderIds { layers: ls, proj_w, proj_b }
}

fn gru_params(input: usize, hidden: usize) -> usize {
    3 * hidden * input + 3 * hidden * hidden + 6 * hidden
}

fn stack_params(input: usize, hidden: usize, layers: usize, dirs: usize) -> usize {
    (0..layers).map(|l| dirs * gru_params(if l == 0 { input } else { dirs * hidden }, hidden)).sum()
}

/// Number of scalar parameters for a configuration and vocabulary sizes,
/// computed from the layer shapes without allocating the model.
pub fn count_parameters(config: &ModelConfig, src_vocab: usize, tgt_vocab: usize) -> usize {
    let hd = config.decoder_hidden();
    let text_enc = |t: &TransducerConfig| {
        src_vocab * t.embed_dim + stack_params(t.embed_dim, t.hidden_dim, t.encoder_layers, t.directions()) + t.directions() * t.hidden_dim * hd + hd
    };
    let image_enc = |v: &VisionConfig| {
        v.in_channels * v.conv1_out + v.conv1_out + v.conv1_out * v.conv2_out + v.conv2_out
            + stack_params(v.frame_dim(), v.encoder_hidden, v.encoder_layers, v.directions())
            + v.encoder_out_dim() * hd
            + hd
    };
    let encoders = match config {
        ModelConfig::Text(t) => text_enc(t),
        ModelConfig::Vision(v) => image_enc(v),
        ModelConfig::Multimodal(f) => image_enc(&f.vision) + text_enc(&f.text),
    };
    let ed = config.decoder_embed();
    let decoder = tgt_vocab * ed + gru_params(ed, hd) + config.bridge_in() * hd + hd + config.output_in() * tgt_vocab + tgt_vocab;
    encoders + decoder
}

/// Encoder results for one batch of sources.
pub struct Encoded {
    /// Projected encoder outputs attended by the decoder (`T·B×Hd`).
    pub memory: Var,
    pub lens: Vec<usize>,
    /// Input to the bridge layer (`B×bridge_in`).
    pub bridge_input: Var,
    /// Initial decoder state (`B×Hd`).
    pub init_state: Var,
}

impl Encoded {
    pub fn batch(&self) -> usize {
        self.lens.len()
    }
}

/// Greedy or beam decoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Vocabulary of the token input (text and multimodal models).
    pub src_vocab: Option<Vocab>,
    pub tgt_vocab: Vocab,
    ids: Ids,
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, src_vocab: Option<Vocab>, tgt_vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let needs_text = config.kind() != ModelKind::Vision;
        match (&src_vocab, needs_text) {
            (None, true) => return Err(ModelError::domain("text-input models need a source vocabulary")),
            (Some(_), false) => return Err(ModelError::domain("vision models take no source vocabulary")),
            _ => {}
        }
        let mut store = ParamStore::new();
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
        let hd = config.decoder_hidden();
        let mut text = None;
        let mut image = None;
        if let ModelConfig::Vision(v) | ModelConfig::Multimodal(crate::config::FusionConfig { vision: v, .. }) = &config {
            let conv = ConvIds {
                w1: store.add("img.conv1.w", init.uniform(v.in_channels, v.conv1_out, v.in_channels)),
                b1: store.add("img.conv1.b", init.uniform(1, v.conv1_out, v.in_channels)),
                w2: store.add("img.conv2.w", init.uniform(v.conv1_out, v.conv2_out, v.conv1_out)),
                b2: store.add("img.conv2.b", init.uniform(1, v.conv2_out, v.conv1_out)),
            };
            let enc = add_encoder(&mut store, &mut init, "img", v.frame_dim(), v.encoder_hidden, v.encoder_layers, v.directions(), hd);
            image = Some((conv, enc));
        }
        if let ModelConfig::Text(t) | ModelConfig::Multimodal(crate::config::FusionConfig { text: t, .. }) = &config {
            let sv = src_vocab.as_ref().expect("checked above");
            let emb = store.add("txt.emb", init.normal(sv.len(), t.embed_dim));
            let enc = add_encoder(&mut store, &mut init, "txt", t.embed_dim, t.hidden_dim, t.encoder_layers, t.directions(), hd);
            text = Some((emb, enc));
        }
        let ed = config.decoder_embed();
        let v = tgt_vocab.len();
        let dec_emb = store.add("dec.emb", init.normal(v, ed));
        let dec = add_gru(&mut store, &mut init, "dec.gru", ed, hd);
        let (bridge_w, bridge_b) = add_linear(&mut store, &mut init, "bridge", config.bridge_in(), hd);
        let (out_w, out_b) = add_linear(&mut store, &mut init, "out", config.output_in(), v);
        let ids = Ids { text, image, dec_emb, dec, bridge_w, bridge_b, out_w, out_b };
        Ok(Seq2Seq { config, params: store, src_vocab, tgt_vocab, ids })
    }

    /// Rebuild a model from stored parameters, checking every name and shape.
    pub fn from_parts(
        config: ModelConfig,
        src_vocab: Option<Vocab>,
        tgt_vocab: Vocab,
        params: Vec<(String, Mat)>,
    ) -> Result<Self> {
        let mut model = Seq2Seq::new(config, src_vocab, tgt_vocab, 0)?;
        if params.len() != model.params.len() {
            return Err(ModelError::domain(format!(
                "expected {} parameter arrays, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (name, value) in params {
            let id = model.params.id(&name).ok_or_else(|| ModelError::domain(format!("unknown parameter {name}")))?;
            let want = model.params.get(id).dim();
            if value.dim() != want {
                return Err(ModelError::domain(format!("parameter {name} has shape {:?}, expected {want:?}", value.dim())));
            }
            *model.params.get_mut(id) = value;
        }
        Ok(model)
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    fn check_source(&self, s: &Source) -> Result<()> {
        let kind = self.kind();
        if kind != ModelKind::Vision && s.tokens.as_ref().is_none_or(|t| t.is_empty()) {
            return Err(ModelError::domain(format!("{} model needs a non-empty token input", kind.name())));
        }
        if kind != ModelKind::Text && s.frames.as_ref().is_none_or(|f| f.is_empty()) {
            return Err(ModelError::domain(format!("{} model needs a non-empty frame input", kind.name())));
        }
        Ok(())
    }

    fn dropout_mask(rng: &mut ChaCha8Rng, rows: usize, cols: usize, p: f64) -> Mat {
        let keep = 1.0 / (1.0 - p);
        Mat::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < p { 0.0 } else { keep })
    }

    /// Stacked (bi)directional GRU layers. Returns the last layer's outputs
    /// and its final state per direction.
    fn run_stack(
        tape: &mut Tape,
        x: Var,
        lens: &[usize],
        layers: &[Vec<GruIds>],
        dropout: f64,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> (Var, Vec<Var>) {
        let b = lens.len();
        let t_len = tape.value(x).nrows() / b;
        let masks: Vec<Option<Vec<bool>>> = (0..t_len)
            .map(|t| {
                let m: Vec<bool> = lens.iter().map(|&l| t < l).collect();
                if m.iter().all(|&x| x) {
                    None
                } else {
                    Some(m)
                }
            })
            .collect();
        let mut input = x;
        let mut finals = Vec::new();
        for (li, dirs) in layers.iter().enumerate() {
            finals.clear();
            let mut dir_outs = Vec::new();
            for (d, g) in dirs.iter().enumerate() {
                let (wi, bi, wh, bh) = (tape.param(g.wi), tape.param(g.bi), tape.param(g.wh), tape.param(g.bh));
                let gi = tape.linear(input, wi, bi);
                let hsz = tape.value(wh).nrows();
                let mut h = tape.constant(Mat::zeros((b, hsz)));
                let mut outs = vec![h; t_len];
                let order: Vec<usize> = if d == 0 { (0..t_len).collect() } else { (0..t_len).rev().collect() };
                for t in order {
                    let xt = tape.slice_rows(gi, t * b, (t + 1) * b);
                    let hn = tape.gru_cell(xt, h, wh, bh);
                    h = match &masks[t] {
                        None => hn,
                        Some(m) => tape.select_rows(hn, h, m.clone()),
                    };
                    outs[t] = h;
                }
                finals.push(h);
                dir_outs.push(tape.concat_rows(&outs));
            }
            let out = if dir_outs.len() == 1 { dir_outs[0] } else { tape.concat_cols(&dir_outs) };
            let last = li + 1 == layers.len();
            input = match rng {
                Some(r) if !last && dropout > 0.0 => {
                    let (rows, cols) = tape.value(out).dim();
                    let mask = Self::dropout_mask(r, rows, cols, dropout);
                    tape.mul_const(out, mask)
                }
                _ => out,
            };
        }
        (input, finals)
    }

    fn encode_text(
        &self,
        tape: &mut Tape,
        sources: &[&Source],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> (Var, Vec<usize>, Vec<Var>) {
        let t_cfg = match &self.config {
            ModelConfig::Text(t) => t,
            ModelConfig::Multimodal(f) => &f.text,
            ModelConfig::Vision(_) => unreachable!("vision model has no text encoder"),
        };
        let (emb, enc) = self.ids.text.as_ref().expect("text encoder");
        let seqs: Vec<&Vec<usize>> = sources.iter().map(|s| s.tokens.as_ref().expect("checked")).collect();
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let b = seqs.len();
        let t_len = *lens.iter().max().unwrap_or(&0);
        let mut idx = vec![PAD; t_len * b];
        for (i, s) in seqs.iter().enumerate() {
            for (t, &tok) in s.iter().enumerate() {
                idx[t * b + i] = tok;
            }
        }
        let e = tape.param(*emb);
        let x = tape.gather_rows(e, idx);
        let (out, finals) = Self::run_stack(tape, x, &lens, &enc.layers, t_cfg.dropout, rng);
        let (pw, pb) = (tape.param(enc.proj_w), tape.param(enc.proj_b));
        let mem = tape.linear(out, pw, pb);
        (mem, lens, finals)
    }

    /// Grids stacked as rows `(t·B + b)·HW + position` with channels as columns.
    fn frame_matrix(v: &VisionConfig, sources: &[&Source]) -> Result<(Mat, Vec<usize>)> {
        let b = sources.len();
        let seqs: Vec<&Arc<Vec<FeatureGrid>>> = sources.iter().map(|s| s.frames.as_ref().expect("checked")).collect();
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let t_len = *lens.iter().max().unwrap_or(&0);
        let hw = v.positions();
        let mut x = Mat::zeros((t_len * b * hw, v.in_channels));
        for (i, seq) in seqs.iter().enumerate() {
            for (t, g) in seq.iter().enumerate() {
                if g.dims() != (v.in_channels, v.height, v.width) {
                    return Err(ModelError::domain(format!(
                        "frame dims {:?} do not match model ({}, {}, {})",
                        g.dims(),
                        v.in_channels,
                        v.height,
                        v.width
                    )));
                }
                let vals = g.values();
                let base = (t * b + i) * hw;
                for c in 0..v.in_channels {
                    for p in 0..hw {
                        x[[base + p, c]] = vals[c * hw + p] as f64;
                    }
                }
            }
        }
        Ok((x, lens))
    }

    fn vision_config(&self) -> &VisionConfig {
        match &self.config {
            ModelConfig::Vision(v) => v,
            ModelConfig::Multimodal(f) => &f.vision,
            ModelConfig::Text(_) => unreachable!("text model has no image encoder"),
        }
    }

    /// Two 1×1 convolutions with rectifiers, flattened per frame.
    fn reduce_frames(&self, tape: &mut Tape, x: Mat, frames: usize) -> Var {
        let v = self.vision_config();
        let (conv, _) = self.ids.image.as_ref().expect("image encoder");
        let x = tape.constant(x);
        let (w1, b1, w2, b2) = (tape.param(conv.w1), tape.param(conv.b1), tape.param(conv.w2), tape.param(conv.b2));
        let h = tape.linear(x, w1, b1);
        let h = tape.relu(h);
        let h = tape.linear(h, w2, b2);
        let h = tape.relu(h);
        tape.reshape(h, frames, v.frame_dim())
    }

    /// Reduce one grid to its frame vector (length `conv2_out·H·W`).
    pub fn reduce_frame(&self, grid: &FeatureGrid) -> Result<Vec<f64>> {
        if self.kind() == ModelKind::Text {
            return Err(ModelError::domain("text model has no frame reducer"));
        }
        let src = Source::frames(Arc::new(vec![grid.clone()]));
        let (x, _) = Self::frame_matrix(self.vision_config(), &[&src])?;
        let mut tape = Tape::new(&self.params);
        let out = self.reduce_frames(&mut tape, x, 1);
        Ok(tape.value(out).iter().copied().collect())
    }

    fn encode_image(
        &self,
        tape: &mut Tape,
        sources: &[&Source],
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Vec<usize>, Vec<Var>)> {
        let v = self.vision_config();
        let (x, lens) = Self::frame_matrix(v, sources)?;
        let t_len = *lens.iter().max().unwrap_or(&0);
        let xf = self.reduce_frames(tape, x, t_len * sources.len());
        let (_, enc) = self.ids.image.as_ref().expect("image encoder");
        let (out, finals) = Self::run_stack(tape, xf, &lens, &enc.layers, v.dropout, rng);
        let (pw, pb) = (tape.param(enc.proj_w), tape.param(enc.proj_b));
        let mem = tape.linear(out, pw, pb);
        Ok((mem, lens, finals))
    }

    /// Run the encoder(s) and the bridge. `rng` enables training-mode dropout.
    pub fn encode(&self, tape: &mut Tape, sources: &[&Source], rng: Option<&mut ChaCha8Rng>) -> Result<Encoded> {
        if sources.is_empty() {
            return Err(ModelError::domain("empty batch"));
        }
        for s in sources {
            self.check_source(s)?;
        }
        let mut rng = rng;
        let (memory, lens, mut parts) = match self.kind() {
            ModelKind::Text => {
                let (mem, lens, finals) = self.encode_text(tape, sources, &mut rng);
                let mean = tape.masked_mean(mem, &lens);
                let mut parts = finals;
                parts.push(mean);
                (mem, lens, parts)
            }
            ModelKind::Vision => {
                let (mem, lens, finals) = self.encode_image(tape, sources, &mut rng)?;
                let mean = tape.masked_mean(mem, &lens);
                let mut parts = finals;
                parts.push(mean);
                (mem, lens, parts)
            }
            ModelKind::Multimodal => {
                let (img, img_lens, img_finals) = self.encode_image(tape, sources, &mut rng)?;
                let (txt, txt_lens, txt_finals) = self.encode_text(tape, sources, &mut rng);
                let img_mean = tape.masked_mean(img, &img_lens);
                let txt_mean = tape.masked_mean(txt, &txt_lens);
                let mut parts = img_finals;
                parts.extend(txt_finals);
                parts.extend([img_mean, txt_mean]);
                (img, img_lens, parts)
            }
        };
        let bridge_input = if parts.len() == 1 { parts.remove(0) } else { tape.concat_cols(&parts) };
        let (bw, bb) = (tape.param(self.ids.bridge_w), tape.param(self.ids.bridge_b));
        let pre = tape.linear(bridge_input, bw, bb);
        let init_state = tape.tanh(pre);
        Ok(Encoded { memory, lens, bridge_input, init_state })
    }

    /// Replicate encoder results so decoder row `r` reads batch item `rows[r]`.
    pub fn expand(&self, tape: &mut Tape, enc: &Encoded, rows: &[usize]) -> Encoded {
        let b = enc.batch();
        if rows.len() == b && rows.iter().enumerate().all(|(i, &r)| i == r) {
            return Encoded { memory: enc.memory, lens: enc.lens.clone(), bridge_input: enc.bridge_input, init_state: enc.init_state };
        }
        let t_len = tape.value(enc.memory).nrows() / b;
        let mut idx = Vec::with_capacity(t_len * rows.len());
        for t in 0..t_len {
            idx.extend(rows.iter().map(|&r| t * b + r));
        }
        Encoded {
            memory: tape.gather_rows(enc.memory, idx),
            lens: rows.iter().map(|&r| enc.lens[r]).collect(),
            bridge_input: tape.gather_rows(enc.bridge_input, rows.to_vec()),
            init_state: tape.gather_rows(enc.init_state, rows.to_vec()),
        }
    }

    /// One decoder step from the previous tokens. Returns (state, logits,
    /// attention context node).
    pub fn step(&self, tape: &mut Tape, enc: &Encoded, prev: &[usize], state: Var) -> (Var, Var, Var) {
        let e = tape.param(self.ids.dec_emb);
        let x = tape.gather_rows(e, prev.to_vec());
        let g = self.ids.dec;
        let (wi, bi, wh, bh) = (tape.param(g.wi), tape.param(g.bi), tape.param(g.wh), tape.param(g.bh));
        let gi = tape.linear(x, wi, bi);
        let s = tape.gru_cell(gi, state, wh, bh);
        let ctx = tape.attention(s, enc.memory, &enc.lens);
        let o = tape.concat_cols(&[s, ctx]);
        let (ow, ob) = (tape.param(self.ids.out_w), tape.param(self.ids.out_b));
        let logits = tape.linear(o, ow, ob);
        (s, logits, ctx)
    }

    /// Teacher-forced logits for all steps (`Td·R×V`, time-major) and the
    /// matching targets (`None` past each sequence's end token).
    pub fn teacher_forced(&self, tape: &mut Tape, enc: &Encoded, targets: &[&[usize]]) -> (Var, Vec<Option<usize>>) {
        let r = targets.len();
        let t_dec = targets.iter().map(|t| t.len() + 1).max().unwrap_or(1);
        let mut prev = vec![PAD; t_dec * r];
        let mut gold = vec![None; t_dec * r];
        for (i, tgt) in targets.iter().enumerate() {
            prev[i] = START;
            for t in 0..=tgt.len() {
                if t > 0 {
                    prev[t * r + i] = tgt[t - 1];
                }
                gold[t * r + i] = Some(if t < tgt.len() { tgt[t] } else { END });
            }
        }
        let e = tape.param(self.ids.dec_emb);
        let x = tape.gather_rows(e, prev);
        let g = self.ids.dec;
        let (wi, bi, wh, bh) = (tape.param(g.wi), tape.param(g.bi), tape.param(g.wh), tape.param(g.bh));
        let gi = tape.linear(x, wi, bi);
        let mut s = enc.init_state;
        let mut outs = Vec::with_capacity(t_dec);
        for t in 0..t_dec {
            let gt = tape.slice_rows(gi, t * r, (t + 1) * r);
            s = tape.gru_cell(gt, s, wh, bh);
            let ctx = tape.attention(s, enc.memory, &enc.lens);
            outs.push(tape.concat_cols(&[s, ctx]));
        }
        let o = tape.concat_rows(&outs);
        let (ow, ob) = (tape.param(self.ids.out_w), tape.param(self.ids.out_b));
        (tape.linear(o, ow, ob), gold)
    }

    /// Mean token cross-entropy of `targets` given `sources`; pair `r` reads
    /// source `rows[r]`. With `teacher_forcing < 1`, each later input token
    /// is the model's own previous argmax with probability `1 − ratio`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        sources: &[&Source],
        rows: &[usize],
        targets: &[&[usize]],
        teacher_forcing: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        assert_eq!(rows.len(), targets.len());
        let mut rng = rng;
        let enc = self.encode(tape, sources, rng.as_deref_mut())?;
        let enc = self.expand(tape, &enc, rows);
        let denom: f64 = targets.iter().map(|t| (t.len() + 1) as f64).sum();
        if teacher_forcing >= 1.0 {
            let (logits, gold) = self.teacher_forced(tape, &enc, targets);
            return Ok(tape.cross_entropy(logits, gold, denom));
        }
        let r = targets.len();
        let t_dec = targets.iter().map(|t| t.len() + 1).max().unwrap_or(1);
        let mut prev = vec![START; r];
        let mut s = enc.init_state;
        let mut total: Option<Var> = None;
        for t in 0..t_dec {
            let (ns, logits, _) = self.step(tape, &enc, &prev, s);
            s = ns;
            let gold: Vec<Option<usize>> = targets
                .iter()
                .map(|tg| match t.cmp(&tg.len()) {
                    std::cmp::Ordering::Less => Some(tg[t]),
                    std::cmp::Ordering::Equal => Some(END),
                    std::cmp::Ordering::Greater => None,
                })
                .collect();
            let l = tape.cross_entropy(logits, gold.clone(), denom);
            total = Some(match total {
                Some(acc) => tape.add(acc, l),
                None => l,
            });
            let lv = tape.value(logits);
            for (i, g) in gold.iter().enumerate() {
                let own = best_token(&log_softmax(lv.row(i).as_slice().expect("contiguous row")));
                let use_gold = match rng.as_deref_mut() {
                    Some(r) => r.random::<f64>() < teacher_forcing,
                    None => true,
                };
                prev[i] = match (use_gold, g) {
                    (true, Some(tok)) => *tok,
                    _ => own,
                };
            }
        }
        Ok(total.expect("at least one decoder step"))
    }

    /// Greedy decoding of a batch; output `i` excludes the end token.
    pub fn greedy_batch(&self, sources: &[&Source], max_len: usize) -> Result<Vec<Vec<usize>>> {
        if max_len < 1 {
            return Err(ModelError::domain("max_len must be >= 1"));
        }
        let mut tape = Tape::new(&self.params);
        let enc = self.encode(&mut tape, sources, None)?;
        Ok(self.greedy_from(&mut tape, &enc, max_len).0)
    }

    /// Greedy decoding from encoder results; also returns the attention
    /// weights of every step for each item.
    pub fn greedy_from(&self, tape: &mut Tape, enc: &Encoded, max_len: usize) -> (Vec<Vec<usize>>, Vec<Vec<Vec<f64>>>) {
        let b = enc.batch();
        let mut out = vec![Vec::new(); b];
        let mut weights = vec![Vec::new(); b];
        let mut done = vec![false; b];
        let mut prev = vec![START; b];
        let mut s = enc.init_state;
        for _ in 0..max_len {
            let (ns, logits, ctx) = self.step(tape, enc, &prev, s);
            s = ns;
            let lv = tape.value(logits);
            let w = tape.attention_weights(ctx).expect("attention node");
            for i in 0..b {
                if done[i] {
                    continue;
                }
                weights[i].push(w.row(i).iter().copied().collect());
                let tok = best_token(&log_softmax(lv.row(i).as_slice().expect("contiguous row")));
                if tok == END {
                    done[i] = true;
                } else {
                    out[i].push(tok);
                }
                prev[i] = tok;
            }
            if done.iter().all(|&d| d) {
                break;
            }
        }
        (out, weights)
    }

    /// Beam search over one source. Hypotheses compete on cumulative
    /// log-probability; completions are ranked by log-probability divided
    /// by length (end token included).
    pub fn beam(&self, source: &Source, k: usize, max_len: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(ModelError::domain("beam width must be >= 1"));
        }
        if max_len < 1 {
            return Err(ModelError::domain("max_len must be >= 1"));
        }
        let mut tape = Tape::new(&self.params);
        let enc = self.encode(&mut tape, &[source], None)?;
        // (tokens, score)
        let mut alive: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
        let mut states = enc.init_state;
        let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
        for _ in 0..max_len {
            let rows = vec![0; alive.len()];
            let e = self.expand(&mut tape, &enc, &rows);
            let prev: Vec<usize> = alive.iter().map(|(t, _)| t.last().copied().unwrap_or(START)).collect();
            let (ns, logits, _) = self.step(&mut tape, &e, &prev, states);
            let lv = tape.value(logits);
            // (total, hyp, logp, token)
            let mut cands: Vec<(f64, usize, f64, usize)> = Vec::new();
            for (h, (_, score)) in alive.iter().enumerate() {
                let lp = log_softmax(lv.row(h).as_slice().expect("contiguous row"));
                for (tok, &l) in lp.iter().enumerate() {
                    if tok != PAD && tok != START {
                        cands.push((score + l, h, l, tok));
                    }
                }
            }
            cands.sort_by(|a, b| {
                b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(b.2.total_cmp(&a.2)).then(a.3.cmp(&b.3))
            });
            let mut next = Vec::new();
            let mut parents = Vec::new();
            for &(total, h, _, tok) in cands.iter().take(k) {
                let mut toks = alive[h].0.clone();
                if tok == END {
                    let n = (toks.len() + 1) as f64;
                    finished.push((toks, total / n));
                } else {
                    toks.push(tok);
                    next.push((toks, total));
                    parents.push(h);
                }
            }
            if next.is_empty() {
                alive.clear();
                break;
            }
            states = tape.gather_rows(ns, parents);
            alive = next;
        }
        for (toks, score) in alive {
            let n = toks.len().max(1) as f64;
            finished.push((toks, score / n));
        }
        let best = finished
            .into_iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.1.total_cmp(&b.1).then(ib.cmp(ia)))
            .map(|(_, h)| h.0)
            .unwrap_or_default();
        Ok(best)
    }

    /// Decode one source.
    pub fn decode(&self, source: &Source, mode: DecodeMode, max_len: usize) -> Result<Vec<usize>> {
        match mode {
            DecodeMode::Greedy => Ok(self.greedy_batch(&[source], max_len)?.remove(0)),
            DecodeMode::Beam(k) => self.beam(source, k, max_len),
        }
    }

    /// Greedy decoding of many sources in fixed consecutive chunks, so the
    /// result for a source depends only on its position.
    pub fn decode_all(&self, sources: &[Source], max_len: usize, chunk: usize) -> Result<Vec<Vec<usize>>> {
        let mut out = Vec::with_capacity(sources.len());
        for c in sources.chunks(chunk.max(1)) {
            let refs: Vec<&Source> = c.iter().collect();
            out.extend(self.greedy_batch(&refs, max_len)?);
        }
        Ok(out)
    }

    /// Teacher-forced argmax accuracy over all target tokens (end included).
    pub fn token_accuracy(&self, sources: &[&Source], rows: &[usize], targets: &[&[usize]]) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let enc = self.encode(&mut tape, sources, None)?;
        let enc = self.expand(&mut tape, &enc, rows);
        let (logits, gold) = self.teacher_forced(&mut tape, &enc, targets);
        let lv = tape.value(logits);
        let (mut hit, mut n) = (0usize, 0usize);
        for (i, g) in gold.iter().enumerate() {
            if let Some(g) = g {
                n += 1;
                if best_token(&log_softmax(lv.row(i).as_slice().expect("contiguous row"))) == *g {
                    hit += 1;
                }
            }
        }
        Ok(if n == 0 { 1.0 } else { hit as f64 / n as f64 })
    }
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Highest-scoring token other than pad and start; ties go to the lowest id.
pub fn best_token(logp: &[f64]) -> usize {
    let mut best = END;
    for (tok, &l) in logp.iter().enumerate() {
        if tok == PAD || tok == START {
            continue;
        }
        if l > logp[best] {
            best = tok;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{FusionConfig, TransducerConfig};

    fn vocab(words: &str) -> Vocab {
        Vocab::build(&[words.split_whitespace().collect::<Vec<_>>()], 1)
    }

    fn tiny_text() -> Seq2Seq {
        let cfg = TransducerConfig { embed_dim: 6, hidden_dim: 5, encoder_layers: 2, ..TransducerConfig::desk() };
        Seq2Seq::new(ModelConfig::Text(cfg), Some(vocab("a b c d e")), vocab("x y z w"), 3).unwrap()
    }

    fn grids(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Arc<Vec<FeatureGrid>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Arc::new(
            (0..n)
                .map(|_| FeatureGrid::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
                .collect(),
        )
    }

    #[test]
    fn parameter_count_matches_allocation() {
        let m = tiny_text();
        assert_eq!(m.num_parameters(), count_parameters(&m.config, 9, 8));
        let v = Seq2Seq::new(ModelConfig::Vision(VisionConfig::desk()), None, vocab("x y"), 0).unwrap();
        assert_eq!(v.num_parameters(), count_parameters(&v.config, 0, 6));
        let f = Seq2Seq::new(ModelConfig::Multimodal(FusionConfig::desk()), Some(vocab("a")), vocab("x y"), 0).unwrap();
        assert_eq!(f.num_parameters(), count_parameters(&f.config, 5, 6));
    }

    #[test]
    fn beam_one_equals_greedy() {
        let m = tiny_text();
        for toks in [vec![4, 5, 6], vec![7], vec![3, 3, 3, 3, 8]] {
            let s = Source::tokens(toks);
            assert_eq!(m.decode(&s, DecodeMode::Beam(1), 12).unwrap(), m.decode(&s, DecodeMode::Greedy, 12).unwrap());
        }
    }

    #[test]
    fn decoding_terminates_and_validates_max_len() {
        let m = tiny_text();
        let s = Source::tokens(vec![3, 3, 3]);
        assert!(m.decode(&s, DecodeMode::Greedy, 5).unwrap().len() <= 5);
        assert!(m.decode(&s, DecodeMode::Beam(3), 5).unwrap().len() <= 5);
        assert!(matches!(m.decode(&s, DecodeMode::Greedy, 0), Err(ModelError::Domain(_))));
    }

    #[test]
    fn batched_greedy_matches_single() {
        let m = tiny_text();
        let srcs: Vec<Source> = vec![Source::tokens(vec![4, 5]), Source::tokens(vec![6, 7, 8, 4, 4]), Source::tokens(vec![5])];
        let batch = m.decode_all(&srcs, 10, 8).unwrap();
        for (s, b) in srcs.iter().zip(&batch) {
            assert_eq!(&m.decode(s, DecodeMode::Greedy, 10).unwrap(), b);
        }
    }

    #[test]
    fn pad_targets_do_not_change_the_loss() {
        let m = tiny_text();
        let srcs = [Source::tokens(vec![4, 5, 6])];
        let refs: Vec<&Source> = srcs.iter().collect();
        let loss_of = |targets: &[&[usize]]| {
            let mut t = Tape::new(&m.params);
            let l = m.loss(&mut t, &refs, &vec![0; targets.len()], targets, 1.0, None).unwrap();
            t.value(l)[[0, 0]]
        };
        assert!(loss_of(&[&[4], &[4, 5, 6]]).is_finite());
        let mut t = Tape::new(&m.params);
        let enc = m.encode(&mut t, &refs, None).unwrap();
        let enc = m.expand(&mut t, &enc, &[0, 0]);
        let (logits, gold) = m.teacher_forced(&mut t, &enc, &[&[4], &[4, 5, 6]]);
        let mut perturbed = t.value(logits).clone();
        for (i, g) in gold.iter().enumerate() {
            if g.is_none() {
                perturbed.row_mut(i).fill(123.0);
            }
        }
        let p = t.constant(perturbed);
        let l1 = t.cross_entropy(logits, gold.clone(), 6.0);
        let l2 = t.cross_entropy(p, gold, 6.0);
        assert_eq!(t.value(l1), t.value(l2));
    }

    #[test]
    fn frame_order_matters_and_dims_are_checked() {
        let m = Seq2Seq::new(ModelConfig::Vision(VisionConfig { encoder_layers: 1, ..VisionConfig::desk() }), None, vocab("x"), 1).unwrap();
        let g = grids(2, 64, 4, 4, 9);
        let rev = Arc::new(vec![g[1].clone(), g[0].clone()]);
        let mut t = Tape::new(&m.params);
        let a = m.encode(&mut t, &[&Source::frames(g)], None).unwrap();
        let b = m.encode(&mut t, &[&Source::frames(rev)], None).unwrap();
        assert_ne!(t.value(a.memory), t.value(b.memory));
        let bad = Source::frames(grids(1, 8, 4, 4, 0));
        assert!(m.encode(&mut t, &[&bad], None).is_err());
        let text_only = Source::tokens(vec![4]);
        assert!(m.encode(&mut t, &[&text_only], None).is_err());
    }

    #[test]
    fn reduce_frame_shapes_and_zero_input() {
        let paper_conv = VisionConfig { encoder_hidden: 2, encoder_layers: 1, decoder_hidden: 2, embed_dim: 2, ..VisionConfig::paper() };
        let m = Seq2Seq::new(ModelConfig::Vision(paper_conv), None, vocab("x"), 0).unwrap();
        assert_eq!(m.reduce_frame(&grids(1, 512, 7, 7, 0)[0]).unwrap().len(), 1568);
        let mut d = Seq2Seq::new(ModelConfig::Vision(VisionConfig::desk()), None, vocab("x"), 0).unwrap();
        let zero = FeatureGrid::zeros(64, 4, 4);
        assert_eq!(d.reduce_frame(&zero).unwrap().len(), 128);
        // Nonzero biases: every position sees the same input, so the same output.
        let v = d.reduce_frame(&zero).unwrap();
        for p in 1..16 {
            assert_eq!(&v[p * 8..(p + 1) * 8], &v[..8]);
        }
        for name in ["img.conv1.b", "img.conv2.b"] {
            let id = d.params.id(name).unwrap();
            d.params.get_mut(id).fill(0.0);
        }
        assert!(d.reduce_frame(&zero).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn text_input_reaches_the_decoder_only_through_the_bridge() {
        let cfg = FusionConfig {
            vision: VisionConfig { encoder_layers: 1, ..VisionConfig::desk() },
            text: TransducerConfig { encoder_layers: 1, ..TransducerConfig::desk() },
        };
        let m = Seq2Seq::new(ModelConfig::Multimodal(cfg), Some(vocab("a b c")), vocab("x y z"), 2).unwrap();
        let frames = grids(3, 64, 4, 4, 5);
        let with_text = Source { tokens: Some(vec![4, 5, 6]), frames: Some(frames.clone()) };
        let zeroed = Source { tokens: Some(vec![PAD, PAD, PAD]), frames: Some(frames) };
        let mut t = Tape::new(&m.params);
        let a = m.encode(&mut t, &[&with_text], None).unwrap();
        let b = m.encode(&mut t, &[&zeroed], None).unwrap();
        assert_eq!(t.value(a.memory), t.value(b.memory));
        let img_part = 2 * 64;
        let (ba, bb) = (t.value(a.bridge_input), t.value(b.bridge_input));
        assert_eq!(ba.slice(ndarray::s![.., ..img_part]), bb.slice(ndarray::s![.., ..img_part]));
        assert_ne!(ba, bb);
        assert_ne!(t.value(a.init_state), t.value(b.init_state));
        // Swapping in b's initial state reproduces b's decoding exactly.
        let mixed = Encoded { memory: a.memory, lens: a.lens.clone(), bridge_input: a.bridge_input, init_state: b.init_state };
        let (out_mixed, w_mixed) = m.greedy_from(&mut t, &mixed, 6);
        let (out_b, w_b) = m.greedy_from(&mut t, &b, 6);
        assert_eq!(out_mixed, out_b);
        assert_eq!(w_mixed, w_b);
    }

    #[test]
    fn attention_weights_normalize_during_decoding() {
        let m = tiny_text();
        let mut t = Tape::new(&m.params);
        let srcs = [Source::tokens(vec![4, 5, 6, 7]), Source::tokens(vec![8])];
        let refs: Vec<&Source> = srcs.iter().collect();
        let enc = m.encode(&mut t, &refs, None).unwrap();
        let (_, weights) = m.greedy_from(&mut t, &enc, 8);
        for (item, steps) in weights.iter().enumerate() {
            for w in steps {
                assert!(w.iter().all(|&x| x >= 0.0));
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(w[srcs[item].tokens.as_ref().unwrap().len()..].iter().all(|&x| x == 0.0));
            }
        }
    }
}
