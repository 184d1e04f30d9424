//! Checkpoint file format.
//!
//! ```text
//! magic      8 bytes  "PDANCKPT"
//! version    u32
//! config     u32 length + UTF-8 canonical `key = value` lines
//! count      u32
//! tensors    count x { u16 name length, name, u8 rank, rank x u32 extent,
//!                      f32 values }
//! checksum   u32 CRC-32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian. Tensors appear in store order.

use std::fs;
use std::path::Path;

use super::config::NetworkConfig;
use super::graph::{build_network, ModelGraph};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PDANCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub(crate) fn encode(model: &ModelGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = model.config.to_canonical();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    let entries = model.params.entries();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.tensor.rank() as u8);
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<ModelGraph> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 8 {
        return Err(Error::Integrity("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if &body[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Integrity("bad magic".into()));
    }
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
        .map_err(|_| Error::Integrity("config is not UTF-8".into()))?;
    let config = NetworkConfig::from_canonical(cfg_text)?;
    let mut model = build_network(&config)?;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Integrity(format!(
            "checkpoint has {count} tensors, config implies {}",
            model.params.len()
        )));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?;
        let expected = &model.params.entry(id).name;
        if name != expected {
            return Err(Error::Integrity(format!("tensor '{name}' where '{expected}' expected")));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let t = model.params.get_mut(id);
        if shape != t.shape() {
            return Err(Error::Integrity(format!("tensor '{name}' has shape {shape:?}")));
        }
        let raw = r.take(t.len() * 4)?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Integrity("trailing bytes after tensors".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(model);
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelGraph> {
    decode(&fs::read(path)?)
}

/// Loads a checkpoint and rejects it unless its architecture matches
/// `expected` (the seed is not compared).
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &NetworkConfig) -> Result<ModelGraph> {
    let model = load_checkpoint(path)?;
    let mut found = model.config.clone();
    found.seed = expected.seed;
    if &found != expected {
        let diff: Vec<String> = found
            .to_canonical()
            .lines()
            .zip(expected.to_canonical().lines())
            .filter(|(a, b)| a != b)
            .map(|(a, b)| format!("checkpoint '{a}' vs requested '{b}'"))
            .collect();
        return Err(Error::ConfigMismatch(diff.join("; ")));
    }
    Ok(model)
}
