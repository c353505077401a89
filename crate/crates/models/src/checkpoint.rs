//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `ACTSUMCK`, u32 version, u8 model kind,
//! then length-prefixed JSON blocks for the configs, source vocabulary and
//! target vocabulary, a u32 parameter count followed by
//! `(name, rows, cols, f64 values)` records, and a final JSON history block.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, ModelKind, TrainConfig};
use crate::error::{ModelError, Result};
use crate::model::Seq2Seq;
use crate::tape::Mat;
use crate::train::History;
use crate::vocab::Vocab;

pub const MAGIC: &[u8; 8] = b"ACTSUMCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub task: String,
    pub model: Seq2Seq,
    pub train_config: TrainConfig,
    pub history: History,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    task: String,
    model: ModelConfig,
    train: TrainConfig,
}

fn write_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.write_u64::<LittleEndian>(bytes.len() as u64).expect("vec write");
    out.extend_from_slice(bytes);
}

fn read_block(cur: &mut Cursor<&[u8]>) -> std::io::Result<Vec<u8>> {
    let n = cur.read_u64::<LittleEndian>()? as usize;
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if n > remaining {
        return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "block extends past end of file"));
    }
    let mut buf = vec![0; n];
    cur.read_exact(&mut buf)?;
    Ok(buf)
}

impl Checkpoint {
    pub fn max_decode_len(&self) -> usize {
        self.train_config.max_decode_len
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).expect("vec write");
        out.push(self.model.kind().code());
        let meta = Meta { task: self.task.clone(), model: self.model.config.clone(), train: self.train_config.clone() };
        write_block(&mut out, &serde_json::to_vec(&meta).expect("serializable meta"));
        write_block(&mut out, &serde_json::to_vec(&self.model.src_vocab).expect("serializable vocab"));
        write_block(&mut out, &serde_json::to_vec(&self.model.tgt_vocab).expect("serializable vocab"));
        out.write_u32::<LittleEndian>(self.model.params.len() as u32).expect("vec write");
        for (name, m) in self.model.params.iter() {
            out.write_u32::<LittleEndian>(name.len() as u32).expect("vec write");
            out.extend_from_slice(name.as_bytes());
            out.write_u32::<LittleEndian>(m.nrows() as u32).expect("vec write");
            out.write_u32::<LittleEndian>(m.ncols() as u32).expect("vec write");
            for &x in m.iter() {
                out.write_f64::<LittleEndian>(x).expect("vec write");
            }
        }
        write_block(&mut out, &serde_json::to_vec(&self.history).expect("serializable history"));
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |r: String| ModelError::checkpoint(origin, r);
        let io = |e: std::io::Error| ModelError::checkpoint(origin, format!("truncated or corrupt: {e}"));
        if bytes.len() < 13 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let mut cur = Cursor::new(bytes);
        cur.set_position(8);
        let version = cur.read_u32::<LittleEndian>().map_err(io)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let kind = ModelKind::from_code(cur.read_u8().map_err(io)?).ok_or_else(|| bad("unknown model kind".into()))?;
        let json = |b: Vec<u8>, what: &str| -> Result<serde_json::Value> {
            serde_json::from_slice(&b).map_err(|e| ModelError::checkpoint(origin, format!("{what} block: {e}")))
        };
        let meta: Meta = serde_json::from_value(json(read_block(&mut cur).map_err(io)?, "config")?)
            .map_err(|e| bad(format!("config block: {e}")))?;
        if meta.model.kind() != kind {
            return Err(bad(format!("header kind {} disagrees with config kind {}", kind.name(), meta.model.kind().name())));
        }
        let src: Option<Vocab> = serde_json::from_value(json(read_block(&mut cur).map_err(io)?, "source vocab")?)
            .map_err(|e| bad(format!("source vocab block: {e}")))?;
        let tgt: Vocab = serde_json::from_value(json(read_block(&mut cur).map_err(io)?, "target vocab")?)
            .map_err(|e| bad(format!("target vocab block: {e}")))?;
        let n = cur.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let len = cur.read_u32::<LittleEndian>().map_err(io)? as usize;
            let mut name = vec![0; len];
            cur.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name).map_err(|_| bad("parameter name is not utf-8".into()))?;
            let rows = cur.read_u32::<LittleEndian>().map_err(io)? as usize;
            let cols = cur.read_u32::<LittleEndian>().map_err(io)? as usize;
            let remaining = (bytes.len() - cur.position() as usize) / 8;
            if rows.saturating_mul(cols) > remaining {
                return Err(bad(format!("parameter {name} extends past end of file")));
            }
            let mut vals = vec![0.0; rows * cols];
            cur.read_f64_into::<LittleEndian>(&mut vals).map_err(io)?;
            params.push((name, Mat::from_shape_vec((rows, cols), vals).expect("length checked")));
        }
        let history: History = serde_json::from_value(json(read_block(&mut cur).map_err(io)?, "history")?)
            .map_err(|e| bad(format!("history block: {e}")))?;
        if cur.position() as usize != bytes.len() {
            return Err(bad("trailing bytes".into()));
        }
        let model = Seq2Seq::from_parts(meta.model, src, tgt, params).map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint { task: meta.task, model, train_config: meta.train, history })
    }

    /// Write atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| ModelError::checkpoint(path.display().to_string(), e.to_string()))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TransducerConfig;
    use crate::train::EpochRecord;

    fn sample() -> Checkpoint {
        let v = Vocab::build(&[vec!["a", "b"]], 1);
        let cfg = TransducerConfig { embed_dim: 3, hidden_dim: 4, encoder_layers: 1, ..TransducerConfig::desk() };
        let model = Seq2Seq::new(ModelConfig::Text(cfg), Some(v.clone()), v, 5).unwrap();
        let history = History {
            epochs: vec![EpochRecord { epoch: 1, train_loss: 2.5, valid_metric: Some(0.25) }],
            best_epoch: Some(1),
        };
        Checkpoint { task: "pddl2sum".into(), model, train_config: TrainConfig::default(), history }
    }

    #[test]
    fn roundtrip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back.model.params, c.model.params);
        assert_eq!(back.history, c.history);
        assert_eq!(back.to_bytes(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        c.save(&p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes);
        assert_eq!(Checkpoint::load(&p).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], "x").is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPTxxxxxxxx", "x").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra, "x").is_err());
        let mut wrong_kind = bytes;
        wrong_kind[12] = ModelKind::Vision.code();
        assert!(Checkpoint::from_bytes(&wrong_kind, "x").is_err());
    }
}
