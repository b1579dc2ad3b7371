//! Versioned binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "NVDCKPT\0"
//! version  u32      currently 1
//! hlen     u32      length of the JSON header
//! header   hlen     UTF-8 JSON (model variant, configuration, vocabulary)
//! count    u32      number of tensors
//! count x {
//!   nlen   u32, name nlen bytes (UTF-8)
//!   rows   u32, cols u32
//!   values rows*cols x f64
//! }
//! ```
//!
//! Values are always stored as `f64`, so `f32` parameters round-trip exactly.

use std::io::{Read, Write};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"NVDCKPT\0";
pub const VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Checkpoint(e.to_string())
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    mut w: W,
    header: &serde_json::Value,
    store: &ParamStore<T>,
) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io_err)?;
    w.write_all(&header).map_err(io_err)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io_err)?;
    for (_, name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&(t.rows() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(t.cols() as u32).to_le_bytes()).map_err(io_err)?;
        let mut buf = Vec::with_capacity(t.len() * 8);
        for x in t.data() {
            buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
        w.write_all(&buf).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

/// Header plus named tensors in file order.
pub fn read_checkpoint<T: Scalar, R: Read>(mut r: R) -> Result<(serde_json::Value, Vec<(String, Tensor<T>)>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let hlen = read_u32(&mut r)? as usize;
    let mut header = vec![0u8; hlen];
    r.read_exact(&mut header).map_err(io_err)?;
    let header: serde_json::Value = serde_json::from_slice(&header)?;
    let count = read_u32(&mut r)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut raw = vec![0u8; rows * cols * 8];
        r.read_exact(&mut raw).map_err(io_err)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        tensors.push((name, Tensor::new([rows, cols], data)?));
    }
    Ok((header, tensors))
}

/// Overwrite every parameter of `store` from `tensors`, matching by name and shape.
pub fn load_into<T: Scalar>(store: &mut ParamStore<T>, tensors: Vec<(String, Tensor<T>)>) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, t) in tensors {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name:?}")))?;
        if store.get(id).shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {:?}, model expects {:?}",
                t.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut store = ParamStore::<f32>::new();
        store.add("a.w", Tensor::new([2, 3], vec![0.1, -0.2, 0.3, 1e-7, 5.0, -6.5]).unwrap());
        store.add("b", Tensor::row(vec![f32::MIN_POSITIVE]));
        let header = serde_json::json!({"variant": "ar"});
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &header, &store).unwrap();
        let (h, tensors) = read_checkpoint::<f32, _>(buf.as_slice()).unwrap();
        assert_eq!(h, header);
        let mut other = ParamStore::<f32>::new();
        other.add("a.w", Tensor::zeros([2, 3]));
        other.add("b", Tensor::zeros([1, 1]));
        load_into(&mut other, tensors).unwrap();
        assert_eq!(other, store);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint::<f64, _>(&b"hello world, not a checkpoint"[..]).is_err());
        let mut store = ParamStore::<f64>::new();
        store.add("a", Tensor::zeros([2, 2]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &serde_json::Value::Null, &store).unwrap();
        let (_, tensors) = read_checkpoint::<f64, _>(buf.as_slice()).unwrap();
        let mut wrong = ParamStore::<f64>::new();
        wrong.add("a", Tensor::zeros([1, 4]));
        assert!(load_into(&mut wrong, tensors).is_err());
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint::<f64, _>(buf.as_slice()).is_err());
    }
}
