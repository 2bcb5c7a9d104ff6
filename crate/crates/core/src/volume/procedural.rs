use serde::{Deserialize, Serialize};

use super::VolumeField;
use crate::error::Result;
use crate::math::Vec3;
use crate::rng::hash_words;

/// Synthetic volumes for tests and desk-scale experiments. All live in the unit cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Procedural {
    /// Every voxel holds `value`.
    Constant { resolution: usize, value: f64 },
    /// `low` for x < 0.5, `high` otherwise.
    TwoSlab { resolution: usize, low: f64, high: f64 },
    /// `1 - (r / radius)^falloff` clamped at zero, centered in the cube.
    Radial { resolution: usize, radius: f64, falloff: f64 },
    /// Fractal value noise shaped by a soft spherical envelope.
    Fractal { resolution: usize, octaves: u32, seed: u64 },
}

impl Procedural {
    pub fn build(&self) -> Result<VolumeField> {
        let res = match *self {
            Self::Constant { resolution, .. }
            | Self::TwoSlab { resolution, .. }
            | Self::Radial { resolution, .. }
            | Self::Fractal { resolution, .. } => resolution.max(2),
        };
        let spacing = Vec3::splat(1.0 / (res - 1) as f64);
        match *self {
            Self::Constant { value, .. } => VolumeField::from_fn([res; 3], spacing, Vec3::ZERO, |_| value),
            Self::TwoSlab { low, high, .. } => {
                VolumeField::from_fn([res; 3], spacing, Vec3::ZERO, |p| if p.x < 0.5 { low } else { high })
            }
            Self::Radial { radius, falloff, .. } => VolumeField::from_fn([res; 3], spacing, Vec3::ZERO, |p| {
                let r = (p - Vec3::splat(0.5)).length() / radius;
                (1.0 - r.powf(falloff)).max(0.0)
            }),
            Self::Fractal { octaves, seed, .. } => VolumeField::from_fn([res; 3], spacing, Vec3::ZERO, |p| {
                let r = (p - Vec3::splat(0.5)).length() / 0.5;
                let envelope = (1.0 - r * r).max(0.0);
                let n = fbm(p * 4.0, octaves, seed);
                (envelope * (0.35 + 0.9 * n)).clamp(0.0, 1.0)
            }),
        }
    }
}

fn lattice(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let h = hash_words(&[seed, ix as u64, iy as u64, iz as u64]);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(p: Vec3, seed: u64) -> f64 {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (smooth(p.x - fx), smooth(p.y - fy), smooth(p.z - fz));
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { tx } else { 1.0 - tx })
                    * (if dy == 1 { ty } else { 1.0 - ty })
                    * (if dz == 1 { tz } else { 1.0 - tz });
                acc += w * lattice(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

/// Normalized fractal Brownian motion in [0, 1].
fn fbm(p: Vec3, octaves: u32, seed: u64) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0;
    for o in 0..octaves.max(1) {
        sum += amp * value_noise(p * freq, seed.wrapping_add(o as u64));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_stay_normalized() {
        for g in [
            Procedural::Constant { resolution: 8, value: 0.3 },
            Procedural::TwoSlab { resolution: 8, low: 0.2, high: 0.9 },
            Procedural::Radial { resolution: 9, radius: 0.5, falloff: 2.0 },
            Procedural::Fractal { resolution: 16, octaves: 4, seed: 9 },
        ] {
            let f = g.build().unwrap();
            assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(f.bounds().max, Vec3::ONE);
        }
    }

    #[test]
    fn fractal_is_deterministic() {
        let g = Procedural::Fractal { resolution: 8, octaves: 3, seed: 5 };
        assert_eq!(g.build().unwrap(), g.build().unwrap());
    }
}
