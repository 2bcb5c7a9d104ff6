//! Central finite-difference check of the analytic backward pass.

use super::{rasterize_backward, rasterize_with_state, GaussianLevel, RasterSettings};
use crate::math::{Rgb, Vec3};
use crate::rng::Rng;
use crate::scene::Camera;

pub const GROUPS: [&str; 5] = ["positions", "rotations", "log_scales", "opacity_logits", "colors"];

/// A random scene for one gradient check: splats, camera, and a fixed linear loss.
#[derive(Clone, Debug)]
pub struct GradCase {
    pub level: GaussianLevel,
    pub camera: Camera,
    pub weights: Vec<Rgb>,
}

impl GradCase {
    pub fn random(rng: &mut Rng) -> Self {
        let mut u = |a: f64, b: f64| a + (b - a) * rng.next_f64();
        let theta = u(0.0, std::f64::consts::TAU);
        let phi = u(-0.6, 0.6);
        let dist = u(3.0, 5.0);
        let eye = Vec3::new(theta.cos() * phi.cos(), phi.sin(), theta.sin() * phi.cos()) * dist;
        let res = (32, 24);
        let camera = Camera::new(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), u(0.5, 0.9), res).unwrap();
        let mut level = GaussianLevel::default();
        let count = 1 + (u(0.0, 4.0) as usize).min(3);
        for _ in 0..count {
            let pos = Vec3::new(u(-0.4, 0.4), u(-0.4, 0.4), u(-0.4, 0.4));
            let rot = [u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)];
            let ls = Vec3::new(u(0.05, 0.25).ln(), u(0.05, 0.25).ln(), u(0.05, 0.25).ln());
            let col = Rgb::new(u(0.1, 2.0), u(0.1, 2.0), u(0.1, 2.0));
            level.push(pos, rot, ls, u(0.2, 0.8), col);
        }
        let weights = (0..res.0 * res.1).map(|_| Rgb::new(u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0))).collect();
        Self { level, camera, weights }
    }

    pub fn loss(&self, level: &GaussianLevel) -> f64 {
        let (img, _) = rasterize_with_state(level, &self.camera, &RasterSettings::default());
        img.rgb.iter().zip(&self.weights).map(|(c, w)| c.dot(*w)).sum()
    }

    /// Relative error `|analytic - fd| / max(|analytic|, |fd|)` per group, taken over
    /// the vector of all parameters in that group.
    pub fn relative_errors(&self) -> [f64; 5] {
        let (_, state) = rasterize_with_state(&self.level, &self.camera, &RasterSettings::default());
        let g = rasterize_backward(&self.level, &self.camera, &state, &self.weights);
        let mut errs = [0.0; 5];
        for (group, err) in errs.iter_mut().enumerate() {
            let mut analytic = Vec::new();
            let mut numeric = Vec::new();
            for i in 0..self.level.len() {
                let comps = match group {
                    0 | 2 | 4 => 3,
                    1 => 4,
                    _ => 1,
                };
                for k in 0..comps {
                    let (h, a) = match group {
                        0 => (1e-3 * self.level.scale(i).max_component(), g.positions[i][k]),
                        1 => (1e-3 * self.level.rotations[i].iter().map(|v| v * v).sum::<f64>().sqrt(), g.rotations[i][k]),
                        2 => (1e-3, g.log_scales[i][k]),
                        3 => (1e-3, g.opacity_logits[i]),
                        _ => (1e-3 * self.level.colors[i][k].abs().max(1.0), g.colors[i][k]),
                    };
                    let eval = |delta: f64| {
                        let mut l = self.level.clone();
                        match group {
                            0 => l.positions[i][k] += delta,
                            1 => l.rotations[i][k] += delta,
                            2 => l.log_scales[i][k] += delta,
                            3 => l.opacity_logits[i] += delta,
                            _ => l.colors[i][k] += delta,
                        }
                        self.loss(&l)
                    };
                    analytic.push(a);
                    numeric.push((eval(h) - eval(-h)) / (2.0 * h));
                }
            }
            let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
            let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
            *err = if na.max(nn) > 0.0 { diff / na.max(nn) } else { 0.0 };
        }
        errs
    }
}

/// Worst per-group relative error over `cases` random configurations.
pub fn gradient_check(cases: usize, seed: u64) -> [f64; 5] {
    let rng = Rng::new(seed);
    let mut worst = [0.0f64; 5];
    for c in 0..cases {
        let case = GradCase::random(&mut rng.derive(c as u64));
        for (w, e) in worst.iter_mut().zip(case.relative_errors()) {
            *w = w.max(e);
        }
    }
    worst
}
