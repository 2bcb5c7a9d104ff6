//! Online optimization of the cache levels against noisy path buffers.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cache::CacheHierarchy;
use crate::error::{Error, Result};
use crate::gsplat::{rasterize_backward, rasterize_with_state, GaussianLevel, RasterSettings, SplatGradients};
use crate::math::{Rgb, Vec3};
use crate::pathtracer::PathBufferSet;
use crate::scene::Camera;

/// HDR loss averaged over valid pixels and channels, and its gradient with
/// respect to the prediction.
pub fn hdr_loss(predicted: &[Rgb], target: &[Rgb], valid: &[bool]) -> (f64, Vec<Rgb>) {
    hdr_loss_with(predicted, target, valid, LossGradient::Quotient)
}

/// How the prediction-dependent denominator of the HDR loss enters the gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossGradient {
    /// Exact derivative of the scalar loss. Its fixed point on noisy targets is
    /// `mean + variance / (mean + 0.01)`, not the mean.
    Quotient,
    /// Denominator held constant; the fixed point is the target mean.
    #[default]
    Detached,
}

pub fn hdr_loss_with(predicted: &[Rgb], target: &[Rgb], valid: &[bool], mode: LossGradient) -> (f64, Vec<Rgb>) {
    assert!(predicted.len() == target.len() && target.len() == valid.len(), "image shapes differ");
    let k = valid.iter().filter(|&&v| v).count();
    let mut grad = vec![Rgb::ZERO; predicted.len()];
    if k == 0 {
        return (0.0, grad);
    }
    let norm = 1.0 / (3 * k) as f64;
    let mut loss = 0.0;
    for i in 0..predicted.len() {
        if !valid[i] {
            continue;
        }
        for c in 0..3 {
            let (x, y) = (target[i][c], predicted[i][c]);
            let r = x - y;
            let d = y + 0.01;
            loss += r * r / (d * d);
            grad[i][c] = match mode {
                LossGradient::Quotient => (-2.0 * r * d - 2.0 * r * r) / (d * d * d) * norm,
                LossGradient::Detached => -2.0 * r / (d * d) * norm,
            };
        }
    }
    (loss * norm, grad)
}

/// `eta0 / (1 + ln t)` for a residency count `t >= 1`.
pub fn lr_schedule(eta0: f64, t: f64) -> f64 {
    eta0 / (1.0 + t.max(1.0).ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    pub color: f64,
    pub rotation: f64,
    pub scaling: f64,
    pub opacity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { position: 1.16e-3, color: 1.25e-2, rotation: 1e-3, scaling: 0.0, opacity: 1.5e-1 }
    }
}

impl LearningRates {
    pub fn scaled(&self, f: f64) -> Self {
        Self {
            position: self.position * f,
            color: self.color * f,
            rotation: self.rotation * f,
            scaling: self.scaling * f,
            opacity: self.opacity * f,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub lr: LearningRates,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss_gradient: LossGradient,
    /// Train every `cadence` frames.
    pub cadence: u64,
    pub enabled: bool,
    /// Viewport change threshold, relative to the scene diagonal.
    pub translation_tolerance: f64,
    /// Viewport change threshold in radians.
    pub rotation_tolerance: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            lr: LearningRates::default(),
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss_gradient: LossGradient::default(),
            cadence: 1,
            enabled: true,
            translation_tolerance: 1e-4,
            rotation_tolerance: 1e-3,
        }
    }
}

/// Residency counter for the learning-rate schedule; resets when the viewport moves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScheduleState {
    pub t: u64,
    pub camera: Option<Camera>,
}

impl ScheduleState {
    /// Register the camera of the next frame and return its residency count.
    pub fn observe(&mut self, camera: &Camera, scene_diagonal: f64, cfg: &TrainerConfig) -> u64 {
        let moved = match &self.camera {
            Some(prev) => prev.pose_differs(camera, cfg.translation_tolerance * scene_diagonal, cfg.rotation_tolerance),
            None => true,
        };
        self.t = if moved { 1 } else { self.t + 1 };
        self.camera = Some(camera.clone());
        self.t
    }
}

/// First and second moments for one level, flattened per parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelMoments {
    pub step: u64,
    pub m: [Vec<f64>; 5],
    pub v: [Vec<f64>; 5],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub levels: Vec<LevelMoments>,
    /// Parameter updates skipped because of non-finite gradients.
    pub skipped: u64,
}

impl OptimizerState {
    pub fn for_hierarchy(h: &CacheHierarchy) -> Self {
        Self { levels: h.levels.iter().map(LevelMoments::for_level).collect(), skipped: 0 }
    }
}

impl LevelMoments {
    pub fn for_level(level: &GaussianLevel) -> Self {
        let n = level.len();
        let sizes = [3 * n, 4 * n, 3 * n, n, 3 * n];
        Self { step: 0, m: sizes.map(|s| vec![0.0; s]), v: sizes.map(|s| vec![0.0; s]) }
    }
}

fn flatten3(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| p.to_array()).collect()
}

fn unflatten3(dst: &mut [Vec3], src: &[f64]) {
    for (d, c) in dst.iter_mut().zip(src.chunks_exact(3)) {
        *d = Vec3::new(c[0], c[1], c[2]);
    }
}

/// One decoupled-weight-decay adaptive update of a flat parameter group.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    weight_decay: f64,
    cfg: &TrainerConfig,
) -> u64 {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let mut skipped = 0;
    for i in 0..params.len() {
        let g = grads[i];
        if !g.is_finite() {
            skipped += 1;
            continue;
        }
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        params[i] -= lr * weight_decay * params[i];
        params[i] -= lr * mh / (vh.sqrt() + cfg.eps);
    }
    skipped
}

/// Apply one optimizer step to every parameter group of a level.
pub fn adamw_step(level: &mut GaussianLevel, grads: &SplatGradients, state: &mut LevelMoments, lr: &LearningRates, cfg: &TrainerConfig) -> u64 {
    state.step += 1;
    let step = state.step;
    let wd = cfg.weight_decay;
    let mut skipped = 0;
    let LevelMoments { m, v, .. } = state;

    let mut p = flatten3(&level.positions);
    skipped += adamw_update(&mut p, &flatten3(&grads.positions), &mut m[0], &mut v[0], step, lr.position, 0.0, cfg);
    unflatten3(&mut level.positions, &p);

    let mut p: Vec<f64> = level.rotations.iter().flatten().copied().collect();
    let g: Vec<f64> = grads.rotations.iter().flatten().copied().collect();
    skipped += adamw_update(&mut p, &g, &mut m[1], &mut v[1], step, lr.rotation, wd, cfg);
    for (q, c) in level.rotations.iter_mut().zip(p.chunks_exact(4)) {
        *q = [c[0], c[1], c[2], c[3]];
    }

    let mut p = flatten3(&level.log_scales);
    skipped += adamw_update(&mut p, &flatten3(&grads.log_scales), &mut m[2], &mut v[2], step, lr.scaling, wd, cfg);
    unflatten3(&mut level.log_scales, &p);

    skipped += adamw_update(&mut level.opacity_logits, &grads.opacity_logits, &mut m[3], &mut v[3], step, lr.opacity, wd, cfg);

    let mut p = flatten3(&level.colors);
    skipped += adamw_update(&mut p, &flatten3(&grads.colors), &mut m[4], &mut v[4], step, lr.color, wd, cfg);
    unflatten3(&mut level.colors, &p);
    skipped
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub trained: bool,
    /// Residency count used for this step.
    pub t: u64,
    pub losses: Vec<f64>,
    pub level_ms: Vec<f64>,
    pub total_ms: f64,
    pub skipped: u64,
}

/// Fit one level to a masked target image seen from `camera`; returns the loss.
pub fn fit_level(
    level: &mut GaussianLevel,
    camera: &Camera,
    target: &[Rgb],
    valid: &[bool],
    moments: &mut LevelMoments,
    lr: &LearningRates,
    cfg: &TrainerConfig,
) -> (f64, u64) {
    if level.is_empty() || !valid.iter().any(|&v| v) {
        return (0.0, 0);
    }
    let (img, state) = rasterize_with_state(level, camera, &RasterSettings::default());
    let (loss, grad) = hdr_loss_with(&img.rgb, target, valid, cfg.loss_gradient);
    let grads = rasterize_backward(level, camera, &state, &grad);
    (loss, adamw_step(level, &grads, moments, lr, cfg))
}

/// One optimization pass over all levels using this frame's path buffers.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    hierarchy: &mut CacheHierarchy,
    buffers: &PathBufferSet,
    camera: &Camera,
    frame: u64,
    t: u64,
    optimizer: &mut OptimizerState,
    cfg: &TrainerConfig,
) -> Result<TrainStats> {
    if !cfg.enabled || frame % cfg.cadence.max(1) != 0 {
        return Ok(TrainStats { t, ..TrainStats::default() });
    }
    if buffers.frame != frame {
        return Err(Error::StaleFrame { expected: frame, found: buffers.frame });
    }
    if optimizer.levels.len() != hierarchy.levels.len() {
        *optimizer = OptimizerState::for_hierarchy(hierarchy);
    }
    let start = Instant::now();
    let mut cam = camera.clone();
    cam.resolution = (buffers.width, buffers.height);
    let lr = cfg.lr.scaled(lr_schedule(1.0, t as f64));
    let mut stats = TrainStats { trained: true, t, ..TrainStats::default() };
    for (l, level) in hierarchy.levels.iter_mut().enumerate() {
        let ts = Instant::now();
        let (target, valid) = buffers.level_target(l);
        let (loss, skipped) = fit_level(level, &cam, &target, &valid, &mut optimizer.levels[l], &lr, cfg);
        stats.losses.push(loss);
        stats.skipped += skipped;
        stats.level_ms.push(ts.elapsed().as_secs_f64() * 1e3);
    }
    optimizer.skipped += stats.skipped;
    stats.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hdr_loss_spot_values() {
        let (l, g) = hdr_loss(&[Rgb::ZERO], &[Rgb::ONE], &[true]);
        assert!((l - 10000.0).abs() < 1e-9);
        assert!(g[0].x < 0.0);
        let (l, _) = hdr_loss(&[Rgb::ONE], &[Rgb::splat(2.0)], &[true]);
        assert!((l - 1.0 / 1.01f64.powi(2)).abs() < 1e-12);
        let (l, g) = hdr_loss(&[Rgb::ONE], &[Rgb::ONE], &[true]);
        assert_eq!((l, g[0]), (0.0, Rgb::ZERO));
        let (l, g) = hdr_loss(&[Rgb::ZERO], &[Rgb::ONE], &[false]);
        assert_eq!((l, g[0]), (0.0, Rgb::ZERO));
    }

    #[test]
    fn hdr_gradient_matches_finite_differences() {
        let pred = vec![Rgb::new(0.3, 1.5, 0.02), Rgb::new(2.0, 0.1, 0.7), Rgb::new(0.5, 0.5, 0.5)];
        let target = vec![Rgb::new(1.0, 0.2, 0.0), Rgb::new(0.4, 3.0, 0.7), Rgb::new(9.0, 9.0, 9.0)];
        let valid = vec![true, true, false];
        let (_, g) = hdr_loss(&pred, &target, &valid);
        for i in 0..2 {
            for c in 0..3 {
                let h = 1e-6 * pred[i][c].max(1e-2);
                let mut p = pred.clone();
                p[i][c] += h;
                let up = hdr_loss(&p, &target, &valid).0;
                p[i][c] -= 2.0 * h;
                let down = hdr_loss(&p, &target, &valid).0;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[i][c]).abs() <= 1e-4 * fd.abs().max(1e-8), "{i},{c}: {fd} vs {}", g[i][c]);
            }
        }
    }

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0.3, 1.0), 0.3);
        assert!(lr_schedule(1.0, 3.0) < lr_schedule(1.0, 2.0));
        assert!((lr_schedule(0.3, std::f64::consts::E) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn adamw_closed_forms() {
        let cfg = TrainerConfig::default();
        let (mut p, mut m, mut v) = (vec![0.0], vec![0.0], vec![0.0]);
        adamw_update(&mut p, &[1.0], &mut m, &mut v, 1, 0.1, 0.0, &cfg);
        assert!((p[0] + 0.1).abs() < 1e-6);
        let (mut p, mut m, mut v) = (vec![2.0], vec![0.0], vec![0.0]);
        adamw_update(&mut p, &[0.0], &mut m, &mut v, 1, 0.1, 0.5, &cfg);
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
        let (mut p, mut m, mut v) = (vec![2.0], vec![0.0], vec![0.0]);
        adamw_update(&mut p, &[0.0], &mut m, &mut v, 1, 0.1, 0.0, &cfg);
        assert_eq!(p[0], 2.0);
        let (mut p, mut m, mut v) = (vec![2.0, 1.0], vec![0.0; 2], vec![0.0; 2]);
        let skipped = adamw_update(&mut p, &[f64::NAN, 1.0], &mut m, &mut v, 1, 0.1, 0.0, &cfg);
        assert_eq!((skipped, p[0]), (1, 2.0));
    }

    #[test]
    fn viewport_change_resets_counter() {
        let cfg = TrainerConfig::default();
        let a = Camera::new(Vec3::new(0.0, 0.0, -3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.7, (8, 8)).unwrap();
        let mut s = ScheduleState::default();
        assert_eq!(s.observe(&a, 1.0, &cfg), 1);
        assert_eq!(s.observe(&a, 1.0, &cfg), 2);
        assert_eq!(s.observe(&a, 1.0, &cfg), 3);
        let mut b = a.clone();
        b.position.x += 0.01;
        assert_eq!(s.observe(&b, 1.0, &cfg), 1);
    }
}
