//! Binary checkpoint container.
//!
//! Layout: magic `MULM1`, u32 tensor count, then per tensor: u32 name
//! length + UTF-8 name, u32 rank, extents as u64 little-endian, a one-byte
//! element-type tag, and raw 32-bit little-endian values. Unknown magic or
//! tags are rejected.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::tensor::Tensor;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MULM1";
const TAG_F32: u8 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

/// Write named tensors in container order. Values are stored as `f32`.
pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    tensors: &[(String, Tensor<T>)],
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &extent in tensor.shape() {
            out.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        out.push(TAG_F32);
        for &v in tensor.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)
}

/// Read a container written by [`save_checkpoint`].
pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<Vec<(String, Tensor<T>)>, CheckpointError> {
    let path = path.as_ref();
    let io_err = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let format_err = |reason: String| CheckpointError::Format {
        path: path.display().to_string(),
        reason,
    };

    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err)?
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *cursor + n > bytes.len() {
            return Err(format_err(format!(
                "truncated: wanted {n} bytes at offset {cursor}",
                cursor = *cursor
            )));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };

    let magic = take(&mut cursor, 5)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(format_err(format!("unknown magic {magic:?}")));
    }
    let count = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut cursor, name_len)?)
            .map_err(|_| format_err("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize);
        }
        let tag = take(&mut cursor, 1)?[0];
        if tag != TAG_F32 {
            return Err(format_err(format!("unknown element type tag {tag}")));
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let v = f32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
            data.push(T::from_f64_lossy(f64::from(v)));
        }
        tensors.push((name, Tensor::new(shape, data)));
    }
    if cursor != bytes.len() {
        return Err(format_err(format!(
            "{} trailing bytes after {count} tensors",
            bytes.len() - cursor
        )));
    }
    Ok(tensors)
}
