//! Little-endian binary parameter files.
//!
//! Layout: magic `PMCK`, `u32` version, `u32` parameter count, then per
//! parameter in name order: `u32` name length, UTF-8 name, `u32` rank,
//! `u32` extents, `f32` values. Velocities and gradients are not stored.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PMCK";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &ParameterSet<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + params.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &e in p.value.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &x in p.value.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<ParameterSet<f32>> {
    parse(bytes).map_err(|m| Error::format(origin, m))
}

fn parse(bytes: &[u8]) -> std::result::Result<ParameterSet<f32>, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = r.u32()?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "parameter name is not UTF-8".to_string())?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e)).ok_or("extent overflow")?;
        let raw = r.take(n.checked_mul(4).ok_or("extent overflow")?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if params.get(&name).is_some() {
            return Err(format!("duplicate parameter `{name}`"));
        }
        params.insert(name, Tensor::new(shape, data).map_err(|e| e.to_string())?);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(params)
}

pub fn save(params: &ParameterSet<f32>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParameterSet<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::EncoderConfig;

    #[test]
    fn round_trip_is_exact() {
        let p: ParameterSet<f32> = EncoderConfig::default().init(9).unwrap();
        let bytes = to_bytes(&p);
        let q = from_bytes(&bytes, Path::new("mem")).unwrap();
        assert!(p.bit_eq(&q));
        assert_eq!(to_bytes(&q), bytes);
    }

    #[test]
    fn header_layout() {
        let mut p = ParameterSet::new();
        p.insert("a", Tensor::<f32>::vector(vec![1.0, -2.0]));
        let b = to_bytes(&p);
        assert_eq!(&b[..4], b"PMCK");
        assert_eq!(b[4..8], 1u32.to_le_bytes());
        assert_eq!(b[8..12], 1u32.to_le_bytes());
        assert_eq!(b.len(), 12 + 4 + 1 + 4 + 4 + 8);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let p: ParameterSet<f32> = EncoderConfig::default().init(9).unwrap();
        let bytes = to_bytes(&p);
        for bad in [&bytes[..bytes.len() - 1], &bytes[..3], b"XXXX\x01\0\0\0\0\0\0\0".as_slice()] {
            assert!(matches!(from_bytes(bad, Path::new("x")), Err(Error::Format { .. })));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra, Path::new("x")).is_err());
    }
}
