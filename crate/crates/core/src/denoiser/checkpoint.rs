//! Checkpoint files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "CNMK" | version u32 | config_len u32 | config JSON
//! n_tensors u32
//! per tensor: name_len u32 | name | ndim u32 | dims u32 * ndim | f32 * prod(dims)
//! crc32 u32 over everything before it
//! ```

use std::fs;
use std::path::Path;

use super::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CNMK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(model: &Denoiser<f32>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(model.config())?;
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    let entries = model.layout().entries();
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for entry in entries {
        buf.extend_from_slice(&(entry.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(entry.name.as_bytes());
        buf.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
        for &d in &entry.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &model.params()[entry.range.clone()] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::corrupt("checkpoint truncated"))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Denoiser<f32>> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::corrupt("not a checkpoint file (bad magic)"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::corrupt("checkpoint checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Unsupported(format!("checkpoint version {version}")));
    }
    let json_len = r.u32()? as usize;
    let config: DenoiserConfig = serde_json::from_slice(r.take(json_len)?)?;
    let mut model = Denoiser::<f32>::init(config, 0)?;
    let n_tensors = r.u32()? as usize;
    let expected = model.layout().entries().to_vec();
    if n_tensors != expected.len() {
        return Err(Error::corrupt(format!(
            "{n_tensors} tensors, config implies {}",
            expected.len()
        )));
    }
    for entry in &expected {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::corrupt("tensor name is not utf-8"))?;
        if name != entry.name {
            return Err(Error::corrupt(format!("expected tensor {}, found {name}", entry.name)));
        }
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != entry.shape {
            return Err(Error::corrupt(format!(
                "tensor {name} has shape {shape:?}, expected {:?}",
                entry.shape
            )));
        }
        let data = r.take(entry.range.len() * 4)?;
        for (p, chunk) in model.params_mut()[entry.range.clone()]
            .iter_mut()
            .zip(data.chunks_exact(4))
        {
            *p = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != body.len() {
        return Err(Error::corrupt("trailing bytes after tensors"));
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::corrupt("checkpoint holds non-finite parameters"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Denoiser<f32>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Denoiser<f32>> {
    from_bytes(&fs::read(path)?)
}
