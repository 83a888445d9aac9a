//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     8 bytes  "FCDSCKP1"
//! seed      u64
//! step      u64
//! cfg_hash  u64
//! config    str      (u32 byte length + UTF-8)
//! vocab     u32 count, then count × str
//! labels    u32 count, then count × str
//! params    u32 count, then per parameter:
//!           name str, rank u32, rank × u64 dims, numel × f64
//! ```

use std::path::Path;

use thiserror::Error;

use super::Model;
use crate::config::{Config, ConfigError};
use crate::corpus::LabelSchema;
use crate::encoder::Vocabulary;
use crate::numerics::Tensor;
use crate::scalar::Real;
use crate::util::write_atomic;

pub const MAGIC: &[u8; 8] = b"FCDSCKP1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("truncated checkpoint at byte {0}")]
    Truncated(usize),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub seed: u64,
    pub step: u64,
    pub config_hash: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Format(format!("invalid UTF-8 at byte {at}")))
    }

    fn strings(&mut self) -> Result<Vec<String>, CheckpointError> {
        let n = self.u32()?;
        (0..n).map(|_| self.str()).collect()
    }
}

impl<T: Real> Model<T> {
    pub fn to_checkpoint_bytes(&self, step: u64) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u64(self.config.seed);
        w.u64(step);
        w.u64(self.config.hash());
        w.str(&self.config.to_text());
        w.u32(self.vocab.words().len());
        for word in self.vocab.words() {
            w.str(word);
        }
        w.u32(self.schema.names().len());
        for name in self.schema.names() {
            w.str(name);
        }
        w.u32(self.store.len());
        for p in self.store.iter() {
            w.str(&p.name);
            w.u32(p.value.rank());
            for &d in p.value.shape() {
                w.u64(d as u64);
            }
            for &x in p.value.data() {
                w.0.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        w.0
    }

    /// Rebuilds the model; parameter names and shapes must match the
    /// architecture implied by the stored config.
    pub fn from_checkpoint_bytes(
        bytes: &[u8],
    ) -> Result<(Self, CheckpointHeader), CheckpointError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
            return Err(CheckpointError::Magic);
        }
        let header = CheckpointHeader {
            seed: r.u64()?,
            step: r.u64()?,
            config_hash: r.u64()?,
        };
        let config = Config::parse(&r.str()?)?;
        if config.hash() != header.config_hash {
            return Err(CheckpointError::Format(
                "config hash does not match config text".into(),
            ));
        }
        let vocab = Vocabulary::from_words(r.strings()?);
        let schema =
            LabelSchema::new(r.strings()?).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let mut model = Model::<T>::new(config, vocab, schema)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        let count = r.u32()?;
        if count != model.store.len() {
            return Err(CheckpointError::Format(format!(
                "{count} parameters stored, architecture has {}",
                model.store.len()
            )));
        }
        for _ in 0..count {
            let name = r.str()?;
            let rank = r.u32()?;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let id = model
                .store
                .id(&name)
                .ok_or_else(|| CheckpointError::Format(format!("unknown parameter {name:?}")))?;
            if model.store.get(id).value.shape() != shape.as_slice() {
                return Err(CheckpointError::Format(format!(
                    "parameter {name:?} has shape {shape:?}"
                )));
            }
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|_| r.f64().map(T::lit))
                .collect::<Result<Vec<_>, _>>()?;
            model.store.get_mut(id).value =
                Tensor::new(shape, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok((model, header))
    }

    pub fn save(&self, path: &Path, step: u64) -> Result<(), CheckpointError> {
        write_atomic(path, &self.to_checkpoint_bytes(step)).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader), CheckpointError> {
        let bytes = std::fs::read(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
