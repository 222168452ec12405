//! `AQAT` binary tensor records.
//!
//! ```text
//! b"AQAT" | version: u8 = 1 | dtype: u8 (1 = f32, 2 = f64)
//! ndims: u32 LE | ndims x dim: u32 LE | values, little endian, row-major
//! ```

use std::io::{Read, Write};

use super::float::{DType, Float};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AQAT";
pub const VERSION: u8 = 1;

pub fn encode_tensor<F: Float>(tensor: &Tensor<F>, out: &mut Vec<u8>) {
    out.reserve(10 + 4 * tensor.ndim() + tensor.numel() * F::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(F::DTYPE.code());
    out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.data() {
        v.write_le(out);
    }
}

pub fn write_tensor<F: Float>(w: &mut impl Write, tensor: &Tensor<F>) -> std::io::Result<()> {
    let mut buf = Vec::new();
    encode_tensor(tensor, &mut buf);
    w.write_all(&buf)
}

/// Reader that tracks its byte offset so format errors can say where they
/// happened.
pub struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    pub fn new(inner: R) -> Self {
        OffsetReader { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn format_error(&self, detail: impl Into<String>) -> Error {
        Error::Format { offset: self.offset, detail: detail.into() }
    }

    pub fn read_exact_vec(&mut self, len: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let got = (&mut self.inner).take(len as u64).read_to_end(&mut buf).map_err(|e| {
            self.format_error(format!("reading {what}: {e}"))
        })?;
        if got < len {
            let at = self.offset + got as u64;
            return Err(Error::Format {
                offset: at,
                detail: format!("truncated {what}: expected {len} bytes, found {got}"),
            });
        }
        self.offset += len as u64;
        Ok(buf)
    }

    pub fn read_array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let v = self.read_exact_vec(N, what)?;
        Ok(v.try_into().expect("length checked"))
    }

    pub fn read_u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.read_array::<1>(what)?[0])
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.read_array(what)?))
    }

    pub fn read_f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.read_array(what)?))
    }

    /// True when no bytes remain.
    pub fn at_end(&mut self) -> Result<bool> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(true),
            Ok(_) => Ok(false),
            Err(e) => Err(self.format_error(e.to_string())),
        }
    }

    /// Reads one AQAT record, converting to `F` if it was stored with the
    /// other precision.
    pub fn read_tensor<F: Float>(&mut self) -> Result<Tensor<F>> {
        let start = self.offset;
        let magic = self.read_array::<4>("tensor magic")?;
        if &magic != MAGIC {
            return Err(Error::Format { offset: start, detail: format!("bad tensor magic {magic:?}") });
        }
        let version = self.read_u8("tensor version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: start + 4,
                detail: format!("unsupported tensor version {version}"),
            });
        }
        let code = self.read_u8("tensor dtype")?;
        let dtype = DType::from_code(code).ok_or_else(|| Error::Format {
            offset: start + 5,
            detail: format!("unknown dtype code {code}"),
        })?;
        let ndims = self.read_u32("tensor rank")? as usize;
        if ndims == 0 || ndims > 16 {
            return Err(self.format_error(format!("implausible tensor rank {ndims}")));
        }
        let mut shape = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            let d = self.read_u32("tensor dimension")? as usize;
            if d == 0 {
                return Err(self.format_error("zero tensor dimension"));
            }
            shape.push(d);
        }
        let count = numel(&shape);
        let bytes = self.read_exact_vec(count * dtype.size(), "tensor values")?;
        let data: Vec<F> = match dtype {
            DType::F32 => bytes
                .chunks_exact(4)
                .map(|c| F::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            DType::F64 => bytes
                .chunks_exact(8)
                .map(|c| F::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        Tensor::new(shape, data)
    }
}

pub fn decode_tensor<F: Float>(bytes: &[u8]) -> Result<Tensor<F>> {
    OffsetReader::new(bytes).read_tensor()
}
