//! On-disk tensor format.
//!
//! Layout: magic `WPFT`, version `u32` LE (currently 1), dtype `u8`
//! (0 = f32, 1 = f64), rank `u32` LE, `rank` dimensions as `u64` LE, then the
//! row-major payload little-endian. Readers reject unknown magic or versions
//! and report the byte offset of any malformation.

use std::io::{Read, Write};
use std::path::Path;

use super::TensorBase;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const TENSOR_MAGIC: &[u8; 4] = b"WPFT";
pub const TENSOR_VERSION: u32 = 1;

/// Serializes a tensor; the dtype code is taken from the scalar type.
pub fn write_tensor<S: Scalar>(w: &mut impl Write, t: &TensorBase<S>) -> Result<()> {
    let mut buf = Vec::with_capacity(13 + 8 * t.rank() + S::WIDTH * t.numel());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    buf.push(S::DTYPE);
    buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(&mut buf);
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a, R: Read> {
    inner: &'a mut R,
    offset: u64,
}

impl<'a, R: Read> Cursor<'a, R> {
    fn take(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        let mut filled = 0;
        while filled < n {
            let k = self.inner.read(&mut buf[filled..])?;
            if k == 0 {
                return Err(Error::format(
                    self.offset + filled as u64,
                    format!("truncated while reading {what}"),
                ));
            }
            filled += k;
        }
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Deserializes a tensor, converting the stored dtype to `S` if they differ.
pub fn read_tensor<S: Scalar>(r: &mut impl Read) -> Result<TensorBase<S>> {
    let mut c = Cursor { inner: r, offset: 0 };
    let magic = c.take(4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected WPFT")));
    }
    let version = c.u32("version")?;
    if version != TENSOR_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {version}, expected {TENSOR_VERSION}"),
        ));
    }
    let dtype_off = c.offset;
    let dtype = c.take(1, "dtype")?[0];
    if dtype > 1 {
        return Err(Error::format(dtype_off, format!("unknown dtype code {dtype}")));
    }
    let rank = c.u32("rank")? as usize;
    if rank > 16 {
        return Err(Error::format(c.offset - 4, format!("implausible rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(c.u64("dimension")? as usize);
    }
    let numel: usize = shape.iter().product();
    let width = if dtype == 0 { 4 } else { 8 };
    let payload = c.take(numel * width, "payload")?;
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        let chunk = &payload[i * width..(i + 1) * width];
        let v = if dtype == 0 {
            S::of(f32::read_le(chunk) as f64)
        } else {
            S::of(f64::read_le(chunk))
        };
        data.push(v);
    }
    TensorBase::new(shape, data)
}

pub fn save_tensor<S: Scalar>(path: impl AsRef<Path>, t: &TensorBase<S>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write_tensor(&mut f, t)
}

pub fn load_tensor<S: Scalar>(path: impl AsRef<Path>) -> Result<TensorBase<S>> {
    let mut f = std::fs::File::open(path)?;
    read_tensor(&mut f)
}
