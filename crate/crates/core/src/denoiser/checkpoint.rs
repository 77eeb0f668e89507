//! `TDNW` weight files: magic, version, JSON architecture, named f32 tensors.

use std::path::Path;

use super::network::{ArchConfig, Params};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TDNW";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(params: &Params<f32>) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    let arch = serde_json::to_vec(&params.arch)?;
    put_u32(&mut out, arch.len());
    out.extend_from_slice(&arch);
    let named = params.named();
    put_u32(&mut out, named.len());
    for (name, dims, data) in named {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, dims.len());
        for d in dims {
            put_u32(&mut out, d);
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Params<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("not a TDNW checkpoint"));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::format(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let n = r.u32()?;
    let arch: ArchConfig = serde_json::from_slice(r.take(n)?)?;
    let mut params = Params::<f32>::zeros(&arch)?;
    let expected: Vec<(String, Vec<usize>)> = params.named().into_iter().map(|(n, d, _)| (n, d)).collect();
    if r.u32()? != expected.len() {
        return Err(Error::format("checkpoint tensor count does not match the architecture"));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for (name, dims) in &expected {
        let len = r.u32()?;
        let got = String::from_utf8_lossy(r.take(len)?).into_owned();
        let rank = r.u32()?;
        let got_dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if &got != name || &got_dims != dims {
            return Err(Error::format(format!("checkpoint tensor {got} {got_dims:?}, expected {name} {dims:?}")));
        }
        let count: usize = dims.iter().product();
        let data: Vec<f32> = r.take(count * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!("checkpoint tensor {name} holds non-finite values")));
        }
        tensors.push(data);
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after checkpoint tensors"));
    }
    let mut it = tensors.into_iter();
    for i in 0..params.weights.len() {
        params.weights[i] = it.next().unwrap();
        params.biases[i] = it.next().unwrap();
    }
    Ok(params)
}

pub fn write_checkpoint(path: &Path, params: &Params<f32>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Params<f32>> {
    decode_checkpoint(&std::fs::read(path)?)
}
