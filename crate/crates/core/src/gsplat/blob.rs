//! Binary level snapshot: a 24-byte header followed by structure-of-arrays
//! little-endian `f32` data (positions, rotations, log-scales, opacity logits, colors).

use std::path::Path;

use super::{GaussianLevel, FLOATS_PER_SPLAT};
use crate::error::{Error, IoContext, Result};
use crate::math::Vec3;

const MAGIC: &[u8; 8] = b"GSPLATLV";
const VERSION: u32 = 1;
const HEADER: usize = 24;

pub fn encode_level(level: &GaussianLevel) -> Vec<u8> {
    let n = level.len();
    let mut out = Vec::with_capacity(HEADER + n * FLOATS_PER_SPLAT * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(FLOATS_PER_SPLAT as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    level.positions.iter().flat_map(|p| p.to_array()).for_each(&mut put);
    level.rotations.iter().flatten().copied().for_each(&mut put);
    level.log_scales.iter().flat_map(|p| p.to_array()).for_each(&mut put);
    level.opacity_logits.iter().copied().for_each(&mut put);
    level.colors.iter().flat_map(|p| p.to_array()).for_each(&mut put);
    out
}

pub fn decode_level(bytes: &[u8]) -> Result<GaussianLevel> {
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err(Error::InvalidBlob("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(Error::InvalidBlob(format!("unsupported version {}", u32_at(8))));
    }
    if u32_at(12) as usize != FLOATS_PER_SPLAT {
        return Err(Error::InvalidBlob(format!("expected {FLOATS_PER_SPLAT} floats per splat, header says {}", u32_at(12))));
    }
    let n = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(FLOATS_PER_SPLAT * 4)
        .and_then(|b| b.checked_add(HEADER))
        .ok_or_else(|| Error::InvalidBlob("count overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::InvalidBlob(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut floats = bytes[HEADER..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let vec3s = |floats: &mut dyn Iterator<Item = f64>| -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(floats.next().unwrap(), floats.next().unwrap(), floats.next().unwrap())).collect()
    };
    let positions = vec3s(&mut floats);
    let rotations = (0..n)
        .map(|_| [floats.next().unwrap(), floats.next().unwrap(), floats.next().unwrap(), floats.next().unwrap()])
        .collect();
    let log_scales = vec3s(&mut floats);
    let opacity_logits = (0..n).map(|_| floats.next().unwrap()).collect();
    let colors = vec3s(&mut floats);
    Ok(GaussianLevel { positions, rotations, log_scales, opacity_logits, colors })
}

pub fn write_level_blob(path: &Path, level: &GaussianLevel) -> Result<()> {
    std::fs::write(path, encode_level(level)).at(path)
}

pub fn read_level_blob(path: &Path) -> Result<GaussianLevel> {
    decode_level(&std::fs::read(path).at(path)?)
}
