//! Scalar volumes, transfer functions and free-flight sampling.

mod procedural;
mod transfer;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::math::{Aabb, Ray, Rgb, Vec3};
use crate::rng::Rng;

pub use procedural::Procedural;
pub use transfer::{ControlPoint, TransferFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarType {
    Uint8,
    Uint16,
    Float32,
}

impl ScalarType {
    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "uint8" => Ok(Self::Uint8),
            "uint16" => Ok(Self::Uint16),
            "float32" => Ok(Self::Float32),
            other => Err(Error::UnknownScalarType(other.to_string())),
        }
    }

    pub fn width(self) -> usize {
        match self {
            Self::Uint8 => 1,
            Self::Uint16 => 2,
            Self::Float32 => 4,
        }
    }
}

/// Sidecar describing a raw volume file (little-endian, x fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeMetadata {
    pub dims: [usize; 3],
    pub scalar_type: String,
    pub spacing: [f64; 3],
    #[serde(default)]
    pub origin: [f64; 3],
}

impl VolumeMetadata {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&std::fs::read_to_string(path).at(path)?)?)
    }
}

/// Regular scalar grid. Voxel `(i, j, k)` sits at `origin + (i, j, k) * spacing`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeField {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    data: Vec<f32>,
    scalar_type: ScalarType,
}

impl VolumeField {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3, data: Vec<f32>, scalar_type: ScalarType) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidMetadata(format!("dims {dims:?} must all be >= 2")));
        }
        if !(spacing.x > 0.0 && spacing.y > 0.0 && spacing.z > 0.0) {
            return Err(Error::InvalidMetadata(format!("spacing {spacing:?} must be positive")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidMetadata(format!("{} samples for dims {dims:?}", data.len())));
        }
        let data = data.into_iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }).collect();
        Ok(Self { dims, spacing, origin, data, scalar_type })
    }

    /// Build from a function evaluated at each voxel position.
    pub fn from_fn(dims: [usize; 3], spacing: Vec3, origin: Vec3, f: impl Fn(Vec3) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = origin + Vec3::new(i as f64, j as f64, k as f64).mul_elem(spacing);
                    data.push(f(p) as f32);
                }
            }
        }
        Self::new(dims, spacing, origin, data, ScalarType::Float32)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn scalar_type(&self) -> ScalarType {
        self.scalar_type
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn bounds(&self) -> Aabb {
        let ext = Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        )
        .mul_elem(self.spacing);
        Aabb { min: self.origin, max: self.origin + ext }
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(k * self.dims[1] + j) * self.dims[0] + i] as f64
    }

    pub fn voxel_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64).mul_elem(self.spacing)
    }

    /// Trilinear interpolation; `None` outside the grid.
    pub fn sample(&self, p: Vec3) -> Option<f64> {
        if !self.bounds().contains(p) {
            return None;
        }
        let g = (p - self.origin).div_elem(self.spacing);
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let max_cell = self.dims[a] - 2;
            let c = (g[a].floor().max(0.0) as usize).min(max_cell);
            idx[a] = c;
            frac[a] = (g[a] - c as f64).clamp(0.0, 1.0);
        }
        let [i, j, k] = idx;
        let [fx, fy, fz] = frac;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let c00 = lerp(self.voxel(i, j, k), self.voxel(i + 1, j, k), fx);
        let c10 = lerp(self.voxel(i, j + 1, k), self.voxel(i + 1, j + 1, k), fx);
        let c01 = lerp(self.voxel(i, j, k + 1), self.voxel(i + 1, j, k + 1), fx);
        let c11 = lerp(self.voxel(i, j + 1, k + 1), self.voxel(i + 1, j + 1, k + 1), fx);
        Some(lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz))
    }
}

/// Read a raw volume described by `meta`.
pub fn load_volume(raw_path: &Path, meta: &VolumeMetadata) -> Result<VolumeField> {
    let scalar_type = ScalarType::parse(&meta.scalar_type)?;
    let bytes = std::fs::read(raw_path).at(raw_path)?;
    decode_volume(&bytes, meta.dims, scalar_type, Vec3::from_array(meta.spacing), Vec3::from_array(meta.origin))
}

/// Read `<name>.raw` alongside its `<name>.toml` sidecar.
pub fn load_volume_with_sidecar(sidecar: &Path) -> Result<VolumeField> {
    let meta = VolumeMetadata::load(sidecar)?;
    load_volume(&sidecar.with_extension("raw"), &meta)
}

pub fn decode_volume(
    bytes: &[u8],
    dims: [usize; 3],
    scalar_type: ScalarType,
    spacing: Vec3,
    origin: Vec3,
) -> Result<VolumeField> {
    let n = dims[0] * dims[1] * dims[2];
    let expected = (n * scalar_type.width()) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch { expected, actual: bytes.len() as u64 });
    }
    let data: Vec<f32> = match scalar_type {
        ScalarType::Uint8 => bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        ScalarType::Uint16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        ScalarType::Float32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    VolumeField::new(dims, spacing, origin, data, scalar_type)
}

/// Real collision along a ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub position: Vec3,
    pub albedo: Rgb,
    pub depth_t: f64,
}

/// A volume viewed through a transfer function: the participating medium.
#[derive(Clone, Debug)]
pub struct Medium {
    field: Arc<VolumeField>,
    tf: TransferFunction,
    majorant: f64,
}

impl Medium {
    pub fn new(field: Arc<VolumeField>, tf: TransferFunction) -> Self {
        let majorant = tf.max_extinction();
        Self { field, tf, majorant }
    }

    /// Override the tracking majorant. Must bound every extinction value.
    pub fn with_majorant(mut self, majorant: f64) -> Self {
        assert!(majorant >= self.tf.max_extinction(), "majorant below transfer-function maximum");
        self.majorant = majorant;
        self
    }

    pub fn field(&self) -> &VolumeField {
        &self.field
    }

    pub fn transfer_function(&self) -> &TransferFunction {
        &self.tf
    }

    pub fn set_transfer_function(&mut self, tf: TransferFunction) {
        self.majorant = tf.max_extinction();
        self.tf = tf;
    }

    pub fn majorant(&self) -> f64 {
        self.majorant
    }

    pub fn bounds(&self) -> Aabb {
        self.field.bounds()
    }

    /// Extinction and albedo at `p`; vacuum outside the grid.
    pub fn eval(&self, p: Vec3) -> (f64, Rgb) {
        match self.field.sample(p) {
            Some(s) => self.tf.lookup(s),
            None => (0.0, Rgb::ZERO),
        }
    }

    /// Woodcock tracking from the ray origin to `t_max` (or the volume exit).
    pub fn delta_track(&self, ray: &Ray, t_max: f64, rng: &mut Rng) -> Option<Interaction> {
        if self.majorant <= 0.0 {
            return None;
        }
        let (t0, t1) = self.bounds().intersect(ray, 0.0, t_max)?;
        let mut t = t0;
        loop {
            t -= (1.0 - rng.next_f64()).ln() / self.majorant;
            if t >= t1 {
                return None;
            }
            let p = ray.at(t);
            let (ext, albedo) = self.eval(p);
            if rng.next_f64() * self.majorant < ext {
                return Some(Interaction { position: p, albedo, depth_t: t });
            }
        }
    }

    /// Binary visibility between `a` and `b`; its expectation is the transmittance.
    pub fn transmittance_visibility(&self, a: Vec3, b: Vec3, rng: &mut Rng) -> u8 {
        let d = b - a;
        let len = d.length();
        if len == 0.0 {
            return 1;
        }
        let ray = Ray::new(a, d / len);
        match self.delta_track(&ray, len, rng) {
            Some(_) => 0,
            None => 1,
        }
    }
}
