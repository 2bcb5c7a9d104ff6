//! Differentiable tile-based rasterization of 3D Gaussians.
//!
//! Splats carry view-independent HDR color (no spherical harmonics). The
//! forward pass projects each Gaussian with the local affine approximation of
//! the pinhole map and alpha-composites front to back per 16x16 tile; the
//! backward pass returns exact gradients for all five parameter groups.

mod blob;
pub mod gradcheck;
mod project;
mod raster;

use serde::{Deserialize, Serialize};

use crate::math::{logit, sigmoid, Mat3, Rgb, Vec3};

pub use blob::{read_level_blob, write_level_blob};
pub use project::{project, project_one, ProjectedSplat, NEAR_PLANE};
pub use raster::{rasterize, rasterize_backward, rasterize_with_state, ForwardState, RasterSettings};

/// Floats stored per splat: position 3, rotation 4, scale 3, opacity 1, color 3.
pub const FLOATS_PER_SPLAT: usize = 14;

/// One cache level: a cloud of anisotropic Gaussians.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianLevel {
    pub positions: Vec<Vec3>,
    /// Quaternions `(w, x, y, z)`, normalized only when building covariances.
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Rgb>,
}

impl GaussianLevel {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: Vec3, rotation: [f64; 4], log_scale: Vec3, opacity: f64, color: Rgb) {
        self.positions.push(position);
        self.rotations.push(rotation);
        self.log_scales.push(log_scale);
        self.opacity_logits.push(logit(opacity));
        self.colors.push(color);
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> Vec3 {
        self.log_scales[i].map(f64::exp)
    }

    pub fn color(&self, i: usize) -> Rgb {
        self.colors[i].map(|c| c.max(0.0))
    }

    pub fn covariance(&self, i: usize) -> Mat3 {
        let m = rotation_matrix(normalize_quat(self.rotations[i])).mul_mat(&Mat3::diag(self.scale(i)));
        m.mul_mat(&m.transpose())
    }

    /// Bytes at 32-bit storage.
    pub fn footprint_bytes(&self) -> usize {
        footprint_bytes(self.len())
    }

    pub fn max_scale(&self) -> f64 {
        (0..self.len()).map(|i| self.scale(i).max_component()).fold(0.0, f64::max)
    }
}

pub fn footprint_bytes(count: usize) -> usize {
    count * FLOATS_PER_SPLAT * std::mem::size_of::<f32>()
}

/// Per-parameter gradients, same layout as [`GaussianLevel`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatGradients {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<Vec3>,
    pub opacity_logits: Vec<f64>,
    pub colors: Vec<Rgb>,
}

impl SplatGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![Vec3::ZERO; n],
            rotations: vec![[0.0; 4]; n],
            log_scales: vec![Vec3::ZERO; n],
            opacity_logits: vec![0.0; n],
            colors: vec![Rgb::ZERO; n],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.positions.iter().all(|v| *v == Vec3::ZERO)
            && self.rotations.iter().all(|q| q.iter().all(|&x| x == 0.0))
            && self.log_scales.iter().all(|v| *v == Vec3::ZERO)
            && self.opacity_logits.iter().all(|&x| x == 0.0)
            && self.colors.iter().all(|v| *v == Vec3::ZERO)
    }
}

/// Rasterized HDR image plus per-pixel residual transmittance.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<Rgb>,
    pub transmittance: Vec<f64>,
}

impl SplatImage {
    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        Self { width, height, rgb: vec![value; width * height], transmittance: vec![1.0; width * height] }
    }

    pub fn rgb_at(&self, x: usize, y: usize) -> Rgb {
        self.rgb[y * self.width + x]
    }
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    Mat3([
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_is_orthonormal() {
        let r = rotation_matrix(normalize_quat([0.3, -1.2, 0.5, 2.0]));
        let p = r.mul_mat(&r.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert!((p.0[i][j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn paper_scale_footprint() {
        let total: usize = (0..3).map(|i| footprint_bytes(300_000 >> i)).sum();
        assert_eq!(total, 29_400_000);
    }
}
