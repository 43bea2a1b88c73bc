//! Flat binary tensor files.
//!
//! Layout: magic `PTNSR1\n`, one dtype byte (0 = f32, 1 = f64), one rank
//! byte, `rank` u64 little-endian dimensions, then the values row-major in
//! little-endian order. Checkpoints are directories of these files plus a
//! JSON metadata sidecar owned by the model layer.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::elem::{Dtype, Elem};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"PTNSR1\n";

pub fn write_tensor<T: Elem>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let shape = tensor.shape();
    let mut buf = Vec::with_capacity(9 + shape.len() * 8 + tensor.numel() * T::DTYPE.size_bytes());
    buf.extend_from_slice(MAGIC);
    buf.push(T::DTYPE.code());
    buf.push(shape.len() as u8);
    for &dim in shape {
        buf.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(&mut buf);
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a tensor file whose dtype must match `T`.
pub fn read_tensor<T: Elem>(path: &Path) -> Result<Tensor<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_tensor(&bytes).map_err(|msg| TensorError::Format(format!("{}: {msg}", path.display())))
}

fn parse_tensor<T: Elem>(bytes: &[u8]) -> std::result::Result<Tensor<T>, String> {
    if bytes.len() < 9 {
        return Err("file shorter than header".into());
    }
    if &bytes[..7] != MAGIC {
        return Err("bad magic".into());
    }
    let dtype = Dtype::from_code(bytes[7]).ok_or_else(|| format!("unknown dtype {}", bytes[7]))?;
    if dtype != T::DTYPE {
        return Err(format!("dtype is {:?}, expected {:?}", dtype, T::DTYPE));
    }
    let rank = bytes[8] as usize;
    let dims_end = 9 + rank * 8;
    if bytes.len() < dims_end {
        return Err("file shorter than declared rank".into());
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 9 + i * 8;
        let dim = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        shape.push(dim as usize);
    }
    let numel: usize = shape.iter().product();
    let elem_size = T::DTYPE.size_bytes();
    let expected = dims_end + numel * elem_size;
    if bytes.len() != expected {
        return Err(format!(
            "payload is {} bytes, shape {:?} needs {}",
            bytes.len() - dims_end,
            shape,
            numel * elem_size
        ));
    }
    let data = bytes[dims_end..]
        .chunks_exact(elem_size)
        .map(T::read_le)
        .collect();
    Tensor::from_vec(data, &shape).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_f32_and_f64_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let a = Tensor::from_vec(vec![1.5f32, -0.25, 3.0e-8, 1234.5], &[2, 2]).unwrap();
        let path = dir.path().join("a.ptnsr");
        write_tensor(&path, &a).unwrap();
        let back: Tensor<f32> = read_tensor(&path).unwrap();
        assert_eq!(back.shape(), a.shape());
        assert_eq!(back.data(), a.data());

        let b = Tensor::from_vec(vec![std::f64::consts::PI; 6], &[3, 2, 1]).unwrap();
        let path64 = dir.path().join("b.ptnsr");
        write_tensor(&path64, &b).unwrap();
        let back64: Tensor<f64> = read_tensor(&path64).unwrap();
        assert_eq!(back64.data(), b.data());
    }

    #[test]
    fn header_layout_is_pinned() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_vec(vec![1.0f32, 2.0, 3.0], &[3]).unwrap();
        let path = dir.path().join("t.ptnsr");
        write_tensor(&path, &t).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..7], b"PTNSR1\n");
        assert_eq!(bytes[7], 0, "f32 dtype code");
        assert_eq!(bytes[8], 1, "rank");
        assert_eq!(u64::from_le_bytes(bytes[9..17].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 17 + 3 * 4);
    }

    #[test]
    fn rejects_dtype_mismatch_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_vec(vec![1.0f32], &[1]).unwrap();
        let path = dir.path().join("t.ptnsr");
        write_tensor(&path, &t).unwrap();
        assert!(read_tensor::<f64>(&path).is_err());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        let trunc = dir.path().join("trunc.ptnsr");
        std::fs::write(&trunc, &bytes).unwrap();
        assert!(read_tensor::<f32>(&trunc).is_err());
    }
}
