//! Flat binary weight files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! magic "MFWT" | version (1) | tensor count
//! per tensor: name length | UTF-8 name | rank | dims... | row-major f32 LE values
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::Network;

const MAGIC: &[u8; 4] = b"MFWT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a weight file (bad magic or version)")]
    BadHeader,
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing tensor {0:?}")]
    Missing(String),
    #[error("unexpected tensor {0:?}")]
    Unexpected(String),
    #[error("invalid tensor name")]
    BadName,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> io::Result<()> {
    w.write_all(&(v as u32).to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> io::Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

pub fn write_weights<W: Write>(net: &Network, mut w: W) -> io::Result<()> {
    let tensors = net.tensors();
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION as usize)?;
    put_u32(&mut w, tensors.len())?;
    for (name, shape, data) in tensors {
        put_u32(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(&mut w, shape.len())?;
        for d in &shape {
            put_u32(&mut w, *d)?;
        }
        for &x in data {
            w.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_tensors<R: Read>(mut r: R) -> Result<Vec<NamedTensor>, WeightsError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC || get_u32(&mut r)? != VERSION as usize {
        return Err(WeightsError::BadHeader);
    }
    let count = get_u32(&mut r)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = get_u32(&mut r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| WeightsError::BadName)?;
        let rank = get_u32(&mut r)?;
        let shape = (0..rank).map(|_| get_u32(&mut r)).collect::<io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(NamedTensor { name, shape, data });
    }
    Ok(out)
}

/// Fills `net` (whose architecture fixes the expected shapes) from a weight file.
pub fn read_weights<R: Read>(net: &mut Network, r: R) -> Result<(), WeightsError> {
    let mut loaded = read_tensors(r)?;
    let expected: Vec<(String, Vec<usize>)> = net
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    if let Some(extra) = loaded.iter().find(|t| !expected.iter().any(|(n, _)| n == &t.name)) {
        return Err(WeightsError::Unexpected(extra.name.clone()));
    }
    for ((name, shape), slot) in expected.into_iter().zip(net.tensors_mut()) {
        let pos = loaded
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| WeightsError::Missing(name.clone()))?;
        let t = loaded.swap_remove(pos);
        if t.shape != shape {
            return Err(WeightsError::Shape {
                name,
                expected: shape,
                found: t.shape,
            });
        }
        for (dst, src) in slot.iter_mut().zip(&t.data) {
            *dst = *src as f64;
        }
    }
    Ok(())
}
