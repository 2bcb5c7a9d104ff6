//! Camera, spherical area lights and the scene container.

mod config;

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Ray, Rgb, Vec3};
use crate::rng::Rng;
use crate::volume::Medium;

pub use config::{CameraConfig, CameraKey, CameraPath, SceneConfig, TransferSource, VolumeSource};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in radians.
    pub vertical_fov: f64,
    pub resolution: (usize, usize),
}

/// Orthonormal camera frame: right, up, forward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraFrame {
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl Camera {
    pub fn new(position: Vec3, look_at: Vec3, up: Vec3, vertical_fov: f64, resolution: (usize, usize)) -> Result<Self> {
        let c = Self { position, look_at, up, vertical_fov, resolution };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.vertical_fov > 0.0 && self.vertical_fov < PI) {
            return Err(Error::InvalidScene(format!("fov {} outside (0, pi)", self.vertical_fov)));
        }
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::InvalidScene("resolution must be positive".into()));
        }
        let f = self.look_at - self.position;
        if f.length() == 0.0 || f.normalized().cross(self.up).length() < 1e-9 {
            return Err(Error::InvalidScene("degenerate camera orientation".into()));
        }
        Ok(())
    }

    pub fn frame(&self) -> CameraFrame {
        let forward = (self.look_at - self.position).normalized();
        let right = forward.cross(self.up).normalized();
        let up = right.cross(forward);
        CameraFrame { right, up, forward }
    }

    /// Focal length in pixels (square pixels).
    pub fn focal_px(&self) -> f64 {
        self.resolution.1 as f64 / (2.0 * (0.5 * self.vertical_fov).tan())
    }

    /// World point to camera space (x right, y up, z forward).
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let fr = self.frame();
        let d = p - self.position;
        Vec3::new(fr.right.dot(d), fr.up.dot(d), fr.forward.dot(d))
    }

    /// Pinhole ray through `pixel + jitter`; jitter `(0.5, 0.5)` is the pixel center.
    pub fn primary_ray(&self, pixel: (usize, usize), jitter: (f64, f64)) -> Ray {
        let fr = self.frame();
        let (w, h) = (self.resolution.0 as f64, self.resolution.1 as f64);
        let f = self.focal_px();
        let x = (pixel.0 as f64 + jitter.0 - 0.5 * w) / f;
        let y = (0.5 * h - (pixel.1 as f64 + jitter.1)) / f;
        Ray::new(self.position, (fr.forward + fr.right * x + fr.up * y).normalized())
    }

    /// Pose change test used for learning-rate resets.
    pub fn pose_differs(&self, other: &Camera, translation_tol: f64, rotation_tol: f64) -> bool {
        if (self.position - other.position).length() > translation_tol {
            return true;
        }
        let (a, b) = (self.frame(), other.frame());
        let angle = |u: Vec3, v: Vec3| u.dot(v).clamp(-1.0, 1.0).acos();
        angle(a.forward, b.forward) > rotation_tol || angle(a.up, b.up) > rotation_tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereLight {
    pub center: Vec3,
    pub radius: f64,
    pub emission: Rgb,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightSample {
    pub direction: Vec3,
    pub distance: f64,
    pub emitted: Rgb,
    pub pdf: f64,
}

impl SphereLight {
    /// Cosine of the half-angle of the cone subtended from `p`, and `1 - cos` computed stably.
    fn cone(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let d = (self.center - p).length();
        if d <= self.radius {
            return None;
        }
        let sin2 = (self.radius / d).powi(2);
        let cos_max = (1.0 - sin2).sqrt();
        let one_minus_cos = sin2 / (1.0 + cos_max);
        Some((d, cos_max, one_minus_cos))
    }

    /// Solid-angle density of uniform cone sampling from `p`.
    fn cone_pdf(one_minus_cos: f64) -> f64 {
        1.0 / (TAU * one_minus_cos)
    }

    /// Uniformly sample a direction in the cone subtended by the sphere.
    pub fn sample(&self, p: Vec3, rng: &mut Rng) -> Result<LightSample> {
        let (d, _, one_minus_cos) = self.cone(p).ok_or(Error::InsideLight)?;
        let axis = (self.center - p) / d;
        let u1 = rng.next_f64();
        let u2 = rng.next_f64();
        // cos = 1 - u (1 - cos_max), written to keep precision for tiny cones.
        let om = u1 * one_minus_cos;
        let cos_t = 1.0 - om;
        let sin_t = (om * (2.0 - om)).max(0.0).sqrt();
        let phi = TAU * u2;
        let (t, b) = axis.basis();
        let direction = (axis * cos_t + t * (sin_t * phi.cos()) + b * (sin_t * phi.sin())).normalized();
        let distance = self.hit_distance(p, direction).unwrap_or_else(|| {
            // Grazing ray at the silhouette: tangent point distance.
            (d * d - self.radius * self.radius).max(0.0).sqrt()
        });
        Ok(LightSample { direction, distance, emitted: self.emission, pdf: Self::cone_pdf(one_minus_cos) })
    }

    /// Density `sample` would assign to `dir`; zero if the ray misses the sphere.
    pub fn pdf(&self, p: Vec3, dir: Vec3) -> f64 {
        let Some((d, cos_max, one_minus_cos)) = self.cone(p) else {
            return 0.0;
        };
        let cos = dir.normalized().dot((self.center - p) / d);
        if cos < cos_max {
            return 0.0;
        }
        Self::cone_pdf(one_minus_cos)
    }

    /// Nearest positive ray parameter hitting the sphere.
    pub fn hit_distance(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let oc = origin - self.center;
        let b = oc.dot(dir);
        let c = oc.length_squared() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let t0 = -b - s;
        let t1 = -b + s;
        if t0 > 0.0 {
            Some(t0)
        } else if t1 > 0.0 {
            Some(t1)
        } else {
            None
        }
    }
}

/// A volume, its lights and the viewer.
#[derive(Clone, Debug)]
pub struct Scene {
    pub camera: Camera,
    pub lights: Vec<SphereLight>,
    pub background: Rgb,
    pub medium: Arc<Medium>,
}

impl Scene {
    pub fn new(camera: Camera, lights: Vec<SphereLight>, background: Rgb, medium: Arc<Medium>) -> Result<Self> {
        camera.validate()?;
        if lights.is_empty() && background.max_component() <= 0.0 {
            return Err(Error::InvalidScene("scene needs a light or a nonzero background".into()));
        }
        for l in &lights {
            if !(l.radius > 0.0) || !l.emission.is_finite() || l.emission.min_elem(Rgb::ZERO) != Rgb::ZERO {
                return Err(Error::InvalidScene(format!("invalid light {l:?}")));
            }
        }
        if !background.is_finite() || background.min_elem(Rgb::ZERO) != Rgb::ZERO {
            return Err(Error::InvalidScene("background must be finite and non-negative".into()));
        }
        Ok(Self { camera, lights, background, medium })
    }

    pub fn with_camera(&self, camera: Camera) -> Self {
        Self { camera, ..self.clone() }
    }

    /// Nearest light hit along a ray: (index, distance).
    pub fn hit_light(&self, ray: &Ray) -> Option<(usize, f64)> {
        self.lights
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.hit_distance(ray.origin, ray.dir).map(|t| (i, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}
