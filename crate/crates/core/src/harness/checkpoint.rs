//! Binary checkpoints: `ETRB` magic, format version, JSON header, named
//! little-endian `f64` arrays, CRC32 trailer.

use std::path::Path;

use serde_json::{json, Value};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::Etris;

pub const MAGIC: &[u8; 4] = b"ETRB";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

pub fn encode(model: &Etris, config: &Config) -> Result<Vec<u8>> {
    let header = json!({
        "version": VERSION,
        "seed": model.config.seed,
        "config": config.to_flat(),
        "arrays": model.store.len(),
    });
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, p) in model.store.iter() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.push(DTYPE_F64);
        out.extend_from_slice(&(p.array.shape().len() as u32).to_le_bytes());
        for &d in p.array.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&p.array.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::input("checkpoint truncated"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Rebuilds the model described by the header and restores every array.
pub fn decode(bytes: &[u8]) -> Result<(Etris, Config)> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::input("not a checkpoint (bad magic)"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
        return Err(Error::input("checkpoint checksum mismatch"));
    }
    let mut c = Cursor { bytes: body, pos: 4 };
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::input(format!("unsupported checkpoint version {version}")));
    }
    let hlen = c.u32()? as usize;
    let header: Value = serde_json::from_slice(c.take(hlen)?).map_err(|e| Error::input(format!("checkpoint header: {e}")))?;
    let config = Config::from_value(header.get("config").ok_or_else(|| Error::input("checkpoint header lacks config"))?)?;
    let mut model = Etris::new(&config.model)?;
    let mut restored = 0;
    while c.pos < body.len() {
        let nlen = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?).map_err(|_| Error::input("array name is not UTF-8"))?.to_string();
        if c.take(1)?[0] != DTYPE_F64 {
            return Err(Error::input(format!("array {name}: unsupported dtype")));
        }
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let id = model.store.id(&name).ok_or_else(|| Error::input(format!("checkpoint array {name} not in the model")))?;
        if model.store.get(id).array.shape() != shape.as_slice() {
            return Err(Error::input(format!("array {name}: shape {shape:?} does not match the model")));
        }
        let values: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        model.store.set_values(id, &values)?;
        restored += 1;
    }
    if restored != model.store.len() {
        return Err(Error::input(format!("checkpoint holds {restored} arrays, model has {}", model.store.len())));
    }
    Ok((model, config))
}

pub fn save(path: &Path, model: &Etris, config: &Config) -> Result<()> {
    std::fs::write(path, encode(model, config)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Etris, Config)> {
    let bytes = std::fs::read(path).map_err(|e| Error::input(format!("cannot read checkpoint {}: {e}", path.display())))?;
    decode(&bytes)
}
