use super::GaussianLevel;
use crate::math::{Mat3, Vec3};
use crate::scene::Camera;

/// Splats closer than this (camera-space depth) are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Low-pass filter added to the screen-space covariance diagonal, in px^2.
pub const LOW_PASS: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedSplat {
    /// Camera-space mean (x right, y up, z forward).
    pub cam: Vec3,
    /// Pixel-space mean; pixel centers sit at half-integers.
    pub mean: [f64; 2],
    /// Screen covariance `[A, B, C]` for `[[A, B], [B, C]]`, low-pass included.
    pub cov: [f64; 3],
    /// Inverse covariance `[a, b, c]`.
    pub conic: [f64; 3],
    pub depth: f64,
}

impl ProjectedSplat {
    pub fn max_eigenvalue(&self) -> f64 {
        let [a, b, c] = self.cov;
        let mid = 0.5 * (a + c);
        mid + (mid * mid - (a * c - b * b)).max(0.0).sqrt()
    }
}

/// Perspective Jacobian of pixel coordinates with respect to camera-space position.
pub(crate) fn jacobian(f: f64, t: Vec3) -> [[f64; 3]; 2] {
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    [[f * iz, 0.0, -f * t.x * iz2], [0.0, -f * iz, f * t.y * iz2]]
}

pub(crate) fn view_matrix(camera: &Camera) -> Mat3 {
    let fr = camera.frame();
    Mat3::from_rows(fr.right, fr.up, fr.forward)
}

pub fn project_one(level: &GaussianLevel, i: usize, camera: &Camera, view: &Mat3) -> Option<ProjectedSplat> {
    let t = view.mul_vec(level.positions[i] - camera.position);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let f = camera.focal_px();
    let (w, h) = (camera.resolution.0 as f64, camera.resolution.1 as f64);
    let mean = [0.5 * w + f * t.x / t.z, 0.5 * h - f * t.y / t.z];
    let v = view.mul_mat(&level.covariance(i)).mul_mat(&view.transpose());
    let j = jacobian(f, t);
    // J V J^T for a 2x3 J.
    let jv = |r: usize| Vec3::new(
        j[r][0] * v.0[0][0] + j[r][1] * v.0[1][0] + j[r][2] * v.0[2][0],
        j[r][0] * v.0[0][1] + j[r][1] * v.0[1][1] + j[r][2] * v.0[2][1],
        j[r][0] * v.0[0][2] + j[r][1] * v.0[1][2] + j[r][2] * v.0[2][2],
    );
    let (r0, r1) = (jv(0), jv(1));
    let jrow = |r: usize| Vec3::from_array(j[r]);
    let a = r0.dot(jrow(0)) + LOW_PASS;
    let b = r0.dot(jrow(1));
    let c = r1.dot(jrow(1)) + LOW_PASS;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    Some(ProjectedSplat { cam: t, mean, cov: [a, b, c], conic: [c / det, -b / det, a / det], depth: t.z })
}

/// Project every splat of a level; culled splats map to `None`.
pub fn project(level: &GaussianLevel, camera: &Camera) -> Vec<Option<ProjectedSplat>> {
    let view = view_matrix(camera);
    (0..level.len()).map(|i| project_one(level, i, camera, &view)).collect()
}
