//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "GRPCKPT\0"
//! version  u32
//! meta     u32 length + UTF-8 bytes (free-form, usually JSON model config)
//! count    u32
//! count × { name: u16 length + UTF-8, ndim: u8, dims: ndim × u32 }
//! payload  f64 values of every tensor, in header order
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamStore, meta: &str) -> Result<(), CheckpointError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for (_, t) in params.iter() {
        for v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CheckpointError::Malformed("truncated".into()),
        _ => CheckpointError::Io(e),
    })?;
    Ok(buf)
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String, CheckpointError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| CheckpointError::Malformed("truncated string".into()))?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Malformed("invalid utf-8".into()))
}

/// Reads a checkpoint, returning the parameters and the metadata string.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParamStore, String), CheckpointError> {
    if &read_exact::<_, 8>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(read_exact(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let meta_len = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let meta = read_string(&mut r, meta_len)?;
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let mut header = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let name = read_string(&mut r, name_len)?;
        let [ndim] = read_exact::<_, 1>(&mut r)?;
        let mut dims = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(read_exact(&mut r)?) as usize);
        }
        header.push((name, dims));
    }
    let mut store = ParamStore::new();
    for (name, dims) in header {
        let len: usize = dims.iter().product();
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        let t = Tensor::new(dims, values).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if store.find(&name).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate parameter {name}")));
        }
        store.add(name, t);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok((store, meta))
}

/// Copies values from `loaded` into `target`, requiring identical names and shapes.
pub fn load_into(target: &mut ParamStore, loaded: &ParamStore) -> Result<(), CheckpointError> {
    if target.len() != loaded.len() {
        return Err(CheckpointError::Mismatch(format!(
            "expected {} tensors, found {}",
            target.len(),
            loaded.len()
        )));
    }
    for id in target.ids().collect::<Vec<_>>() {
        let name = target.name(id).to_string();
        let src_id = loaded
            .find(&name)
            .ok_or_else(|| CheckpointError::Mismatch(format!("missing {name}")))?;
        let src = loaded.get(src_id);
        let dst = target.get_mut(id);
        if src.shape() != dst.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "{name}: shape {:?} vs {:?}",
                dst.shape(),
                src.shape()
            )));
        }
        dst.values_mut().copy_from_slice(src.values());
    }
    Ok(())
}
