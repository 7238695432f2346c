//! Binary checkpoint format.
//!
//! ```text
//! magic "STV2XNET" | u32 version | u32 n_dims | u64 dims...
//! u32 n_tensors | per tensor: u32 name_len, name, u32 ndim, u64 shape..., f64 data...
//! sha256 of everything above (32 bytes)
//! ```
//! All integers and reals little-endian.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{KernelError, Result};
use crate::params::ParamSet;
use crate::qnet::NetworkSpec;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"STV2XNET";
pub const VERSION: u32 = 1;

pub fn encode(spec: &NetworkSpec, params: &ParamSet) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let dims = spec.to_dims();
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &s in t.shape() {
            buf.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(KernelError::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(NetworkSpec, ParamSet)> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err(KernelError::Checkpoint("truncated".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(KernelError::Checkpoint("checksum mismatch".into()));
    }
    let mut c = Cursor {
        bytes: body,
        pos: 0,
    };
    if c.take(8)? != MAGIC {
        return Err(KernelError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(KernelError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let n_dims = c.u32()? as usize;
    let dims = (0..n_dims).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
    let spec = NetworkSpec::from_dims(&dims)?;
    let n = c.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..n {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| KernelError::Checkpoint("tensor name is not utf-8".into()))?;
        let ndim = c.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| c.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data = (0..count).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        params.push(name, Tensor::new(shape, data)?);
    }
    if c.pos != body.len() {
        return Err(KernelError::Checkpoint("trailing bytes".into()));
    }
    Ok((spec, params))
}

pub fn save<W: Write>(w: &mut W, spec: &NetworkSpec, params: &ParamSet) -> Result<()> {
    w.write_all(&encode(spec, params))?;
    Ok(())
}

pub fn load<R: Read>(r: &mut R) -> Result<(NetworkSpec, ParamSet)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}
