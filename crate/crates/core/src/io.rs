//! Artifact formats: the binary tensor container and JSON debug dumps.
//!
//! The container is deliberately minimal: magic bytes, mode count, shape,
//! then the payload as little-endian `f64` in layout order. Checkpoint
//! files hold several named tensors back to back; each record is a name
//! followed by one container.

use crate::tensor::DenseTensor;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"TNSR";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes (not a tensor container)")]
    BadMagic,
    #[error("corrupt container: {0}")]
    Corrupt(String),
    #[error("json failure: {0}")]
    Json(#[from] serde_json::Error),
}

/// Write a container header (magic, mode count, shape).
pub fn write_header<W: Write>(w: &mut W, shape: &[usize]) -> Result<(), IoError> {
    w.write_all(MAGIC)?;
    w.write_all(&(shape.len() as u64).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

/// Read a container header back.
pub fn read_header<R: Read>(r: &mut R) -> Result<Vec<usize>, IoError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IoError::BadMagic);
    }
    let ndim = read_u64(r)? as usize;
    if ndim > 64 {
        return Err(IoError::Corrupt(format!("implausible mode count {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(r)? as usize);
    }
    Ok(shape)
}

/// Write a run of little-endian f64 payload values.
pub fn write_f64s<W: Write>(w: &mut W, data: &[f64]) -> Result<(), IoError> {
    for &x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Read a run of little-endian f64 payload values.
pub fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>, IoError> {
    let mut data = vec![0.0f64; len];
    let mut buf = [0u8; 8];
    for x in &mut data {
        r.read_exact(&mut buf)?;
        *x = f64::from_le_bytes(buf);
    }
    Ok(data)
}

/// Write one tensor in container format.
pub fn write_tensor<W: Write>(w: &mut W, t: &DenseTensor) -> Result<(), IoError> {
    write_header(w, t.shape())?;
    write_f64s(w, t.data())
}

/// Read one tensor in container format.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<DenseTensor, IoError> {
    let shape = read_header(r)?;
    let len: usize = shape.iter().product();
    let data = read_f64s(r, len)?;
    Ok(DenseTensor::from_vec(&shape, data))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, IoError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn save_tensor(path: &Path, t: &DenseTensor) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<DenseTensor, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}

/// Write a sequence of named tensors (checkpoint format).
pub fn save_named_tensors(path: &Path, entries: &[(&str, &DenseTensor)]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, t) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(bytes)?;
        write_tensor(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

/// Read back a checkpoint written by [`save_named_tensors`].
pub fn load_named_tensors(path: &Path) -> Result<Vec<(String, DenseTensor)>, IoError> {
    let mut r = BufReader::new(File::open(path)?);
    let count = read_u64(&mut r)? as usize;
    if count > 1 << 20 {
        return Err(IoError::Corrupt(format!("implausible entry count {count}")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        if name_len > 1 << 16 {
            return Err(IoError::Corrupt(format!("implausible name length {name_len}")));
        }
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| IoError::Corrupt("non-utf8 tensor name".into()))?;
        let t = read_tensor(&mut r)?;
        out.push((name, t));
    }
    Ok(out)
}

/// Nested-array JSON value for small debug dumps.
pub fn tensor_to_json(t: &DenseTensor) -> serde_json::Value {
    fn build(shape: &[usize], data: &[f64]) -> serde_json::Value {
        if shape.is_empty() {
            return serde_json::json!(data[0]);
        }
        let chunk = data.len() / shape[0];
        let items: Vec<serde_json::Value> = (0..shape[0])
            .map(|i| build(&shape[1..], &data[i * chunk..(i + 1) * chunk]))
            .collect();
        serde_json::Value::Array(items)
    }
    build(t.shape(), t.data())
}

/// Parse a nested-array JSON value back into a tensor.
pub fn tensor_from_json(v: &serde_json::Value) -> Result<DenseTensor, IoError> {
    let mut shape = Vec::new();
    let mut cursor = v;
    while let serde_json::Value::Array(items) = cursor {
        if items.is_empty() {
            return Err(IoError::Corrupt("empty array in tensor json".into()));
        }
        shape.push(items.len());
        cursor = &items[0];
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    fn collect(v: &serde_json::Value, depth: usize, shape: &[usize], out: &mut Vec<f64>) -> Result<(), IoError> {
        match v {
            serde_json::Value::Array(items) => {
                if depth >= shape.len() || items.len() != shape[depth] {
                    return Err(IoError::Corrupt("ragged tensor json".into()));
                }
                for item in items {
                    collect(item, depth + 1, shape, out)?;
                }
                Ok(())
            }
            _ => {
                if depth != shape.len() {
                    return Err(IoError::Corrupt("ragged tensor json".into()));
                }
                let x = v
                    .as_f64()
                    .ok_or_else(|| IoError::Corrupt("non-numeric entry".into()))?;
                out.push(x);
                Ok(())
            }
        }
    }
    collect(v, 0, &shape, &mut data)?;
    Ok(DenseTensor::from_vec(&shape, data))
}
