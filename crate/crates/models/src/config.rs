use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    /// Dot product between decoder state and projected encoder outputs.
    #[default]
    Dot,
}

/// Text encoder and decoder dims of the recurrent transducer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransducerConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub bidirectional: bool,
    pub dropout: f64,
    #[serde(default)]
    pub attention: AttentionKind,
}

impl TransducerConfig {
    pub fn desk() -> Self {
        TransducerConfig {
            embed_dim: 32,
            hidden_dim: 64,
            encoder_layers: 3,
            bidirectional: true,
            dropout: 0.1,
            attention: AttentionKind::Dot,
        }
    }

    pub fn paper() -> Self {
        TransducerConfig { embed_dim: 512, hidden_dim: 512, ..Self::desk() }
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive(&[("embed_dim", self.embed_dim), ("hidden_dim", self.hidden_dim), ("encoder_layers", self.encoder_layers)])?;
        dropout_ok(self.dropout)
    }
}

/// Frame reduction, frame encoder and decoder dims of the vision model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisionConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv1_out: usize,
    pub conv2_out: usize,
    pub kernel: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub bidirectional: bool,
    pub decoder_hidden: usize,
    pub embed_dim: usize,
    pub dropout: f64,
}

impl VisionConfig {
    pub fn desk() -> Self {
        VisionConfig {
            in_channels: 64,
            height: 4,
            width: 4,
            conv1_out: 16,
            conv2_out: 8,
            kernel: 1,
            encoder_hidden: 64,
            encoder_layers: 3,
            bidirectional: true,
            decoder_hidden: 64,
            embed_dim: 32,
            dropout: 0.1,
        }
    }

    pub fn paper() -> Self {
        VisionConfig {
            in_channels: 512,
            height: 7,
            width: 7,
            conv1_out: 128,
            conv2_out: 32,
            kernel: 1,
            encoder_hidden: 512,
            encoder_layers: 3,
            bidirectional: true,
            decoder_hidden: 512,
            embed_dim: 512,
            dropout: 0.1,
        }
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Length of one reduced frame vector.
    pub fn frame_dim(&self) -> usize {
        self.conv2_out * self.positions()
    }

    pub fn encoder_out_dim(&self) -> usize {
        self.directions() * self.encoder_hidden
    }

    /// Final encoder states plus the projected mean context.
    pub fn bridge_in(&self) -> usize {
        self.encoder_out_dim() + self.decoder_hidden
    }

    /// Decoder state concatenated with the attention context.
    pub fn output_in(&self) -> usize {
        2 * self.decoder_hidden
    }

    pub fn validate(&self) -> Result<()> {
        positive(&[
            ("in_channels", self.in_channels),
            ("height", self.height),
            ("width", self.width),
            ("conv1_out", self.conv1_out),
            ("conv2_out", self.conv2_out),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_layers", self.encoder_layers),
            ("decoder_hidden", self.decoder_hidden),
            ("embed_dim", self.embed_dim),
        ])?;
        if self.kernel != 1 {
            return Err(ModelError::domain("only 1x1 convolutions are supported (kernel must be 1)"));
        }
        dropout_ok(self.dropout)
    }
}

/// Vision model plus a second recurrent encoder for the text input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub vision: VisionConfig,
    /// Text encoder dims; its `hidden_dim` need not match the image encoder.
    pub text: TransducerConfig,
}

impl FusionConfig {
    pub fn desk() -> Self {
        FusionConfig { vision: VisionConfig::desk(), text: TransducerConfig::desk() }
    }

    pub fn paper() -> Self {
        FusionConfig { vision: VisionConfig::paper(), text: TransducerConfig::paper() }
    }

    /// Image and text final states plus both projected mean contexts.
    pub fn bridge_in(&self) -> usize {
        self.vision.encoder_out_dim()
            + self.text.directions() * self.text.hidden_dim
            + 2 * self.vision.decoder_hidden
    }

    pub fn validate(&self) -> Result<()> {
        self.vision.validate()?;
        self.text.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Text,
    Vision,
    Multimodal,
}

impl ModelKind {
    pub fn code(self) -> u8 {
        match self {
            ModelKind::Text => 1,
            ModelKind::Vision => 2,
            ModelKind::Multimodal => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(ModelKind::Text),
            2 => Some(ModelKind::Vision),
            3 => Some(ModelKind::Multimodal),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Text => "text",
            ModelKind::Vision => "vision",
            ModelKind::Multimodal => "multimodal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Text(TransducerConfig),
    Vision(VisionConfig),
    Multimodal(FusionConfig),
}

impl ModelConfig {
    /// Desk preset for a model family.
    pub fn desk(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Text => ModelConfig::Text(TransducerConfig::desk()),
            ModelKind::Vision => ModelConfig::Vision(VisionConfig::desk()),
            ModelKind::Multimodal => ModelConfig::Multimodal(FusionConfig::desk()),
        }
    }

    /// Full-size preset for a model family.
    pub fn paper(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Text => ModelConfig::Text(TransducerConfig::paper()),
            ModelKind::Vision => ModelConfig::Vision(VisionConfig::paper()),
            ModelKind::Multimodal => ModelConfig::Multimodal(FusionConfig::paper()),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Text(_) => ModelKind::Text,
            ModelConfig::Vision(_) => ModelKind::Vision,
            ModelConfig::Multimodal(_) => ModelKind::Multimodal,
        }
    }

    pub fn decoder_hidden(&self) -> usize {
        match self {
            ModelConfig::Text(t) => t.hidden_dim,
            ModelConfig::Vision(v) => v.decoder_hidden,
            ModelConfig::Multimodal(f) => f.vision.decoder_hidden,
        }
    }

    pub fn decoder_embed(&self) -> usize {
        match self {
            ModelConfig::Text(t) => t.embed_dim,
            ModelConfig::Vision(v) => v.embed_dim,
            ModelConfig::Multimodal(f) => f.vision.embed_dim,
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            ModelConfig::Text(t) => t.dropout,
            ModelConfig::Vision(v) => v.dropout,
            ModelConfig::Multimodal(f) => f.vision.dropout,
        }
    }

    pub fn bridge_in(&self) -> usize {
        match self {
            ModelConfig::Text(t) => t.directions() * t.hidden_dim + t.hidden_dim,
            ModelConfig::Vision(v) => v.bridge_in(),
            ModelConfig::Multimodal(f) => f.bridge_in(),
        }
    }

    pub fn output_in(&self) -> usize {
        2 * self.decoder_hidden()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Text(t) => t.validate(),
            ModelConfig::Vision(v) => v.validate(),
            ModelConfig::Multimodal(f) => f.validate(),
        }
    }

    /// Same architecture with dropout set to `p` everywhere.
    pub fn with_dropout(&self, p: f64) -> Self {
        let mut c = self.clone();
        match &mut c {
            ModelConfig::Text(t) => t.dropout = p,
            ModelConfig::Vision(v) => v.dropout = p,
            ModelConfig::Multimodal(f) => {
                f.vision.dropout = p;
                f.text.dropout = p;
            }
        }
        c
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Distinct inputs per batch; all pairs sharing those inputs join it.
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub teacher_forcing: f64,
    /// Decode length cap used for validation and stored with the checkpoint.
    pub max_decode_len: usize,
    /// Inputs decoded together during validation and batch decoding.
    pub decode_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 20,
            patience: 3,
            clip_norm: 1.0,
            seed: 7,
            teacher_forcing: 1.0,
            max_decode_len: 80,
            decode_chunk: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::domain("learning_rate must be a finite value >= 0"));
        }
        if self.patience < 1 {
            return Err(ModelError::domain("patience must be >= 1"));
        }
        positive(&[
            ("batch_size", self.batch_size),
            ("max_decode_len", self.max_decode_len),
            ("decode_chunk", self.decode_chunk),
        ])?;
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return Err(ModelError::domain("teacher_forcing must be in [0, 1]"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(ModelError::domain("clip_norm must be > 0"));
        }
        Ok(())
    }
}

fn positive(fields: &[(&str, usize)]) -> Result<()> {
    for (name, v) in fields {
        if *v == 0 {
            return Err(ModelError::domain(format!("{name} must be positive")));
        }
    }
    Ok(())
}

fn dropout_ok(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(ModelError::domain("dropout must be in [0, 1)"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_dims_match_the_reported_layers() {
        let v = VisionConfig::paper();
        assert_eq!(v.frame_dim(), 1568);
        assert_eq!(v.bridge_in(), 1536);
        assert_eq!(v.output_in(), 1024);
        assert_eq!(FusionConfig::paper().bridge_in(), 3072);
        assert_eq!(ModelConfig::Text(TransducerConfig::paper()).bridge_in(), 1536);
    }

    #[test]
    fn desk_dims() {
        assert_eq!(VisionConfig::desk().frame_dim(), 128);
    }

    #[test]
    fn validation() {
        let mut t = TransducerConfig::desk();
        t.dropout = 1.0;
        assert!(t.validate().is_err());
        let mut v = VisionConfig::desk();
        v.kernel = 3;
        assert!(v.validate().is_err());
        let tc = TrainConfig { patience: 0, ..Default::default() };
        assert!(tc.validate().is_err());
        let tc = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(tc.validate().is_ok());
    }

    #[test]
    fn config_json_roundtrip() {
        let c = ModelConfig::Multimodal(FusionConfig::desk());
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"kind\":\"multimodal\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
    }
}
