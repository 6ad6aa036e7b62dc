//! Binary checkpoint format.
//!
//! Layout: magic `MGCP`, u32 version, u8 stage code, 32-byte SHA-256 of the
//! canonical config dump, the config text itself, the atom vocabulary, then
//! named parameter blocks (generator first) as little-endian f64 with
//! explicit shapes. Loading re-hashes the embedded config and rejects a
//! digest mismatch, and can additionally check against an expected config.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gnn::{ParamSet, PlainTensor};
use crate::graph::{AtomDescriptor, AtomVocab, Element};
use crate::stages::{ModelParams, StageConfig, StageId};

const MAGIC: &[u8; 4] = b"MGCP";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(&'static str),
    #[error("config digest mismatch: checkpoint was written with a different config")]
    ConfigDigestMismatch,
    #[error("config in checkpoint failed to parse: {0}")]
    BadConfig(String),
}

pub fn config_digest(cfg: &StageConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(cfg.dump().as_bytes());
    h.finalize().into()
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_param_set(out: &mut Vec<u8>, ps: &ParamSet) {
    put_u32(out, ps.len() as u32);
    for (name, t) in ps.iter() {
        put_str(out, name);
        put_u64(out, t.shape[0] as u64);
        put_u64(out, t.shape[1] as u64);
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    cfg: &StageConfig,
    vocab: &AtomVocab,
) -> Result<(), CheckpointError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.push(params.stage.code());
    out.extend_from_slice(&config_digest(cfg));
    put_str(&mut out, &cfg.dump());
    put_u32(&mut out, vocab.len() as u32);
    for d in vocab.entries() {
        out.push(d.element.code());
        out.push((d.formal_charge + 2) as u8);
        out.push(d.explicit_h);
    }
    put_param_set(&mut out, &params.generator);
    put_param_set(&mut out, &params.discriminator);

    let mut f = std::fs::File::create(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(&out).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("bad utf8"))
    }

    fn param_set(&mut self) -> Result<ParamSet, CheckpointError> {
        let count = self.u32()?;
        let mut ps = ParamSet::new();
        for _ in 0..count {
            let name = self.str()?;
            let rows = self.u64()? as usize;
            let cols = self.u64()? as usize;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                values.push(f64::from_le_bytes(self.take(8)?.try_into().unwrap()));
            }
            ps.insert(
                &name,
                PlainTensor {
                    shape: [rows, cols],
                    values,
                },
            );
        }
        Ok(ps)
    }
}

/// Loads a checkpoint; `expected` (when given) must have the same config
/// digest the checkpoint was written with.
pub fn load_checkpoint(
    path: &Path,
    expected: Option<&StageConfig>,
) -> Result<(ModelParams, StageConfig, AtomVocab), CheckpointError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let stage = StageId::from_code(r.take(1)?[0]).ok_or(CheckpointError::Corrupt("stage"))?;
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    let cfg_text = r.str()?;
    let mut h = Sha256::new();
    h.update(cfg_text.as_bytes());
    let actual: [u8; 32] = h.finalize().into();
    if actual != digest {
        return Err(CheckpointError::ConfigDigestMismatch);
    }
    let cfg = crate::config::parse_stage_config(&cfg_text)
        .map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    if let Some(exp) = expected {
        if config_digest(exp) != digest {
            return Err(CheckpointError::ConfigDigestMismatch);
        }
    }
    let k = r.u32()? as usize;
    let mut entries = Vec::with_capacity(k);
    for _ in 0..k {
        let raw = r.take(3)?;
        let element =
            Element::from_code(raw[0]).ok_or(CheckpointError::Corrupt("element"))?;
        let d = AtomDescriptor::new(element, raw[1] as i8 - 2, raw[2])
            .map_err(|_| CheckpointError::Corrupt("descriptor"))?;
        entries.push(d);
    }
    let vocab = AtomVocab::new(entries).map_err(|_| CheckpointError::Corrupt("vocab"))?;
    let generator = r.param_set()?;
    let discriminator = r.param_set()?;
    Ok((
        ModelParams {
            stage,
            generator,
            discriminator,
        },
        cfg,
        vocab,
    ))
}
