//! Flat binary tensor format shared by checkpoints and data files.
//!
//! Layout: magic bytes `MCT1`, `u32` rank, `u64` extents, then little-endian
//! element values. The element width is whatever the writing tensor used
//! (4 bytes for `f32`, 8 for `f64`). A standalone file is one tensor and the
//! width is inferred from the byte count; streams of concatenated tensors
//! (checkpoints) carry the width in their manifest instead.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{numel_of, Dtype, Result, Scalar, Tensor, TensorError};

pub const MAGIC: [u8; 4] = *b"MCT1";

/// Serialize one tensor into `out`.
pub fn write_tensor<S: Scalar, W: Write>(out: &mut W, tensor: &Tensor<S>) -> Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
    for &e in tensor.shape() {
        out.write_all(&(e as u64).to_le_bytes())?;
    }
    let width = S::DTYPE.size();
    let mut buf = Vec::with_capacity(tensor.numel() * width);
    for &v in tensor.data() {
        buf.extend_from_slice(&v.to_le_bytes_vec());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Read one tensor of a known element width from a stream. Values convert to
/// `S` (lossless when the widths match).
pub fn read_tensor<S: Scalar, R: Read>(input: &mut R, dtype: Dtype) -> Result<Tensor<S>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(TensorError::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut rank_bytes = [0u8; 4];
    input.read_exact(&mut rank_bytes)?;
    let rank = u32::from_le_bytes(rank_bytes) as usize;
    if rank > 8 {
        return Err(TensorError::Format(format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut e = [0u8; 8];
        input.read_exact(&mut e)?;
        shape.push(u64::from_le_bytes(e) as usize);
    }
    let numel = numel_of(&shape);
    let width = dtype.size();
    let mut raw = vec![0u8; numel * width];
    input.read_exact(&mut raw)?;
    let data = match dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| S::from_f64(f32::from_le_slice(c).as_f64()))
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| S::from_f64(f64::from_le_slice(c)))
            .collect(),
    };
    Tensor::from_vec(&shape, data)
}

pub fn write_tensor_file<S: Scalar, P: AsRef<Path>>(path: P, tensor: &Tensor<S>) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, tensor)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Read a single-tensor file, inferring the element width from the file size.
pub fn read_tensor_file<S: Scalar, P: AsRef<Path>>(path: P) -> Result<Tensor<S>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(TensorError::Format("file too short".into()));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header = 8 + 8 * rank;
    if bytes.len() < header {
        return Err(TensorError::Format("truncated header".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize);
    }
    let numel = numel_of(&shape);
    let payload = bytes.len() - header;
    let dtype = if payload == numel * 4 {
        Dtype::F32
    } else if payload == numel * 8 {
        Dtype::F64
    } else {
        return Err(TensorError::Format(format!(
            "payload of {payload} bytes does not match {numel} elements of any width"
        )));
    };
    read_tensor(&mut &bytes[..], dtype)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_f64_preserves_bits() {
        let t = Tensor::<f64>::from_vec(&[2, 3], vec![0.1, -2.5, 3e-9, 4.0, 5.5, -0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mct");
        write_tensor_file(&path, &t).unwrap();
        let back: Tensor<f64> = read_tensor_file(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn round_trip_f32_preserves_bits() {
        let t = Tensor::<f32>::from_vec(&[4], vec![0.1, -2.5, 3e-9, 4.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mct");
        write_tensor_file(&path, &t).unwrap();
        let back: Tensor<f32> = read_tensor_file(&path).unwrap();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn concatenated_stream_reads_with_explicit_dtype() {
        let a = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[3], vec![3.0, 4.0, 5.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &a).unwrap();
        write_tensor(&mut buf, &b).unwrap();
        let mut cursor = &buf[..];
        let ra: Tensor<f32> = read_tensor(&mut cursor, Dtype::F32).unwrap();
        let rb: Tensor<f32> = read_tensor(&mut cursor, Dtype::F32).unwrap();
        assert_eq!(ra.data(), a.data());
        assert_eq!(rb.data(), b.data());
        assert!(cursor.is_empty());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let bytes = b"NOPE\x01\x00\x00\x00".to_vec();
        let err = read_tensor::<f32, _>(&mut &bytes[..], Dtype::F32);
        assert!(matches!(err, Err(TensorError::Format(_))));
    }
}
