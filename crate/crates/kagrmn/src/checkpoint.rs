//! Binary parameter snapshots.
//!
//! Layout, all integers little-endian `u32`: version, then until end of
//! file one record per parameter: name length, name bytes (UTF-8), rank,
//! dims, then `numel` little-endian `f32` values.

use std::path::Path;

use kagrmn_core::{ParamStore, Tensor};

use crate::error::{io_error, write_atomic, Error, Result};

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&VERSION.to_le_bytes());
    for e in store.entries() {
        let v = e.value();
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(v.shape().len() as u32).to_le_bytes());
        for &d in v.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in v.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<Record>, String> {
    let mut r = Reader { bytes, pos: 0 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version} (expected {VERSION})"));
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "parameter name is not UTF-8".to_string())?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(4).ok_or("shape overflows")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push(Record { name, shape, data });
    }
    Ok(records)
}

pub fn save(path: &Path, store: &ParamStore<f32>) -> Result<()> {
    write_atomic(path, &encode(store))
}

/// Overwrites every parameter of `store`; the file must hold exactly the
/// same names with the same shapes.
pub fn load_into(path: &Path, store: &mut ParamStore<f32>) -> Result<()> {
    let bytes = std::fs::read(path).map_err(io_error(path))?;
    restore(&bytes, store).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}

pub fn restore(bytes: &[u8], store: &mut ParamStore<f32>) -> std::result::Result<(), String> {
    let records = decode(bytes)?;
    let mut seen = vec![false; store.len()];
    for rec in records {
        let id = store
            .lookup(&rec.name)
            .ok_or_else(|| format!("parameter `{}` is not part of this configuration", rec.name))?;
        let expected = store.value(id).shape().to_vec();
        if expected != rec.shape {
            return Err(format!(
                "parameter `{}` has shape {:?}, configuration expects {:?}",
                rec.name, rec.shape, expected
            ));
        }
        let t = Tensor::new(rec.shape, rec.data).map_err(|e| e.to_string())?;
        store.set(id, t).map_err(|e| e.to_string())?;
        seen[id.index()] = true;
    }
    if let Some(id) = store.ids().find(|id| !seen[id.index()]) {
        return Err(format!("parameter `{}` missing", store.name(id)));
    }
    Ok(())
}
