//! Named-tensor container ("TRJW").
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "TRJW"
//! version    u32      1
//! endianness u8       0 = little
//! count      u32      number of tensor records
//! record*    name_len u32, name (UTF-8), rank u32, dims u64 * rank,
//!            dtype u8 (1 = f32, 2 = f64), values little-endian
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TRJW";
pub const FORMAT_VERSION: u32 = 1;
const LITTLE_ENDIAN: u8 = 0;

/// A tensor read back from a container, in its stored precision.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }

    pub fn to_tensor<S: Real>(&self) -> Tensor<S> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }
}

fn encode_record<S: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<S>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.push(S::DTYPE as u8);
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Incremental container builder; tensors may mix precisions.
#[derive(Debug, Default)]
pub struct ContainerWriter {
    count: u32,
    body: Vec<u8>,
}

impl ContainerWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<S: Real>(&mut self, name: &str, t: &Tensor<S>) {
        encode_record(&mut self.body, name, t);
        self.count += 1;
    }

    pub fn finish(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(LITTLE_ENDIAN);
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.body);
        out
    }
}

pub fn encode<S: Real>(tensors: &[(&str, &Tensor<S>)]) -> Vec<u8> {
    let mut w = ContainerWriter::new();
    for (name, t) in tensors {
        w.push(name, t);
    }
    w.finish()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Format(format!(
                "truncated at byte {} (wanted {} more)",
                self.pos, n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_values<S: Real>(bytes: &[u8], shape: &[usize]) -> Result<Tensor<S>> {
    let w = S::DTYPE.size();
    let data = bytes.chunks_exact(w).map(S::read_le).collect();
    Tensor::from_vec(shape, data)
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, StoredTensor)>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let endian = c.take(1)?[0];
    if endian != LITTLE_ENDIAN {
        return Err(NnError::Format(format!("unsupported endianness flag {endian}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| NnError::Format(format!("tensor name: {e}")))?
            .to_string();
        let rank = c.u32()? as usize;
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let code = c.take(1)?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| NnError::Format(format!("{name}: dtype code {code}")))?;
        let n: usize = shape.iter().product();
        let bytes = c.take(n * dtype.size())?;
        let t = match dtype {
            DType::F32 => StoredTensor::F32(decode_values(bytes, &shape)?),
            DType::F64 => StoredTensor::F64(decode_values(bytes, &shape)?),
        };
        out.push((name, t));
    }
    if c.pos != buf.len() {
        return Err(NnError::Format("trailing bytes".into()));
    }
    Ok(out)
}

pub fn write<S: Real, W: Write>(mut w: W, tensors: &[(&str, &Tensor<S>)]) -> Result<()> {
    w.write_all(&encode(tensors))?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<Vec<(String, StoredTensor)>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

impl<S: Real> ParamStore<S> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let items: Vec<(&str, &Tensor<S>)> = self.iter().collect();
        encode(&items)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Overwrites every parameter from a container. Every parameter must be
    /// present with a matching shape; the stored precision may differ.
    pub fn load_from(&mut self, stored: &[(String, StoredTensor)]) -> Result<()> {
        let names: Vec<String> = self.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let t = stored
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| NnError::UnknownParam(name.clone()))?;
            self.assign(&name, t.to_tensor())?;
        }
        Ok(())
    }
}
