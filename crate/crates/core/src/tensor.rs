//! Dense f32 tensor files exchanged with downstream model training.
//!
//! Layout, all little-endian: magic `b"MYOT"`, version u16, dtype u8
//! (0 = f32), ndim u8, `ndim` dims as u64, then the row-major payload.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

pub const TENSOR_MAGIC: &[u8; 4] = b"MYOT";
pub const TENSOR_VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated tensor: {0}")]
    TruncatedPayload(String),
    #[error("unsupported tensor version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("invalid tensor: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if dims.is_empty() || dims.len() > u8::MAX as usize {
            return Err(TensorError::Invalid(format!("{} dimensions", dims.len())));
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::Invalid("element count overflows".into()))?;
        if count == 0 {
            return Err(TensorError::Invalid("tensor has no elements".into()));
        }
        if count != data.len() {
            return Err(TensorError::Invalid(format!("dims imply {count} elements, got {}", data.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn header_len(&self) -> usize {
        8 + 8 * self.dims.len()
    }
}

/// Reorder native-endian words into little-endian file order.
/// `host_little` is the host's byte order; on big-endian hosts every word
/// is byte-swapped.
fn words_to_le(words: impl Iterator<Item = [u8; 4]>, host_little: bool, out: &mut Vec<u8>) {
    for mut w in words {
        if !host_little {
            w.reverse();
        }
        out.extend_from_slice(&w);
    }
}

fn words_from_le(bytes: &[u8], host_little: bool) -> impl Iterator<Item = [u8; 4]> + '_ {
    bytes.chunks_exact(4).map(move |c| {
        let mut w = [c[0], c[1], c[2], c[3]];
        if !host_little {
            w.reverse();
        }
        w
    })
}

const HOST_LITTLE: bool = cfg!(target_endian = "little");

fn encode_with(tensor: &Tensor, host_little: bool, native: impl Fn(f32) -> [u8; 4]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tensor.header_len() + 4 * tensor.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(tensor.dims.len() as u8);
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    words_to_le(tensor.data.iter().map(|&v| native(v)), host_little, &mut out);
    out
}

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    encode_with(tensor, HOST_LITTLE, f32::to_ne_bytes)
}

fn decode_with(bytes: &[u8], host_little: bool, native: impl Fn([u8; 4]) -> f32) -> Result<Tensor, TensorError> {
    if bytes.len() < 8 {
        return Err(TensorError::TruncatedPayload("header shorter than 8 bytes".into()));
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if &magic != TENSOR_MAGIC {
        return Err(TensorError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TENSOR_VERSION {
        return Err(TensorError::UnsupportedVersion(version));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(TensorError::UnsupportedDtype(bytes[6]));
    }
    let ndim = bytes[7] as usize;
    let header = 8 + 8 * ndim;
    if bytes.len() < header {
        return Err(TensorError::TruncatedPayload("dims cut short".into()));
    }
    let dims: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|c| c.checked_mul(4).map(|b| (c, b)));
    let (_, payload_len) = count.ok_or_else(|| TensorError::Invalid("element count overflows".into()))?;
    let payload = &bytes[header..];
    if payload.len() < payload_len {
        return Err(TensorError::TruncatedPayload(format!(
            "payload holds {} bytes, dims need {payload_len}",
            payload.len()
        )));
    }
    if payload.len() > payload_len {
        return Err(TensorError::Invalid(format!("{} trailing bytes", payload.len() - payload_len)));
    }
    let data = words_from_le(payload, host_little).map(native).collect();
    Tensor::new(dims, data)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, TensorError> {
    decode_with(bytes, HOST_LITTLE, f32::from_ne_bytes)
}

/// Encode as a host of the given byte order would: each value starts in that
/// host's native layout and is reordered into file order.
pub fn encode_as_host(tensor: &Tensor, host_little: bool) -> Vec<u8> {
    let native: fn(f32) -> [u8; 4] = if host_little { f32::to_le_bytes } else { f32::to_be_bytes };
    encode_with(tensor, host_little, native)
}

/// Counterpart of [`encode_as_host`].
pub fn decode_as_host(bytes: &[u8], host_little: bool) -> Result<Tensor, TensorError> {
    let native: fn([u8; 4]) -> f32 = if host_little { f32::from_le_bytes } else { f32::from_be_bytes };
    decode_with(bytes, host_little, native)
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<(), TensorError> {
    if let Some(bad) = tensor.data.iter().find(|v| !v.is_finite()) {
        return Err(TensorError::Invalid(format!("non-finite value {bad}")));
    }
    fs::write(path, encode(tensor))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor, TensorError> {
    decode(&fs::read(path)?)
}
