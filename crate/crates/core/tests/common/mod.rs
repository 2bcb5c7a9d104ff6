#![allow(dead_code)]

use std::sync::Arc;

use splatcache::math::{Rgb, Vec3};
use splatcache::scene::{Camera, Scene, SphereLight};
use splatcache::volume::{Medium, TransferFunction, VolumeField};

/// Unit cube filled with a constant scalar 1.
pub fn unit_field() -> Arc<VolumeField> {
    Arc::new(VolumeField::from_fn([4, 4, 4], Vec3::splat(1.0 / 3.0), Vec3::ZERO, |_| 1.0).unwrap())
}

/// A near-orthographic single-pixel camera looking down +z through the cube centre.
pub fn pencil_camera() -> Camera {
    Camera::new(Vec3::new(0.5, 0.5, -1.0), Vec3::new(0.5, 0.5, 0.5), Vec3::new(0.0, 1.0, 0.0), 1e-4, (1, 1)).unwrap()
}

pub fn slab_scene(extinction: f64, albedo: f64, background: f64, lights: Vec<SphereLight>) -> Scene {
    let medium = Medium::new(unit_field(), TransferFunction::constant(extinction, Rgb::splat(albedo)));
    Scene::new(pencil_camera(), lights, Rgb::splat(background), Arc::new(medium)).unwrap()
}

pub fn side_light() -> SphereLight {
    SphereLight { center: Vec3::new(2.0, 0.5, 0.5), radius: 0.3, emission: Rgb::splat(10.0) }
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

use splatcache::gsplat::{rasterize, GaussianLevel};
use splatcache::rng::Rng;
use splatcache::trainer::{fit_level, lr_schedule, LearningRates, LevelMoments, TrainerConfig};

pub fn grid_camera(res: usize) -> Camera {
    Camera::new(Vec3::new(0.0, 0.0, -4.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.7, (res, res)).unwrap()
}

/// An `n`×`n` sheet of splats in the `z = 0` plane covering `[-1, 1]²`.
pub fn splat_sheet(n: usize, scale: f64, opacity: f64, color: f64) -> GaussianLevel {
    let mut level = GaussianLevel::default();
    for j in 0..n {
        for i in 0..n {
            let p = Vec3::new(-1.0 + 2.0 * (i as f64 + 0.5) / n as f64, -1.0 + 2.0 * (j as f64 + 0.5) / n as f64, 0.0);
            level.push(p, [1.0, 0.0, 0.0, 0.0], Vec3::splat(scale.ln()), opacity, Rgb::splat(color));
        }
    }
    level
}

pub fn psnr_vs(img: &[Rgb], reference: &[Rgb]) -> f64 {
    let mse = img.iter().zip(reference).map(|(a, b)| (*a - *b).length_squared()).sum::<f64>() / (3 * img.len()) as f64;
    let peak = reference.iter().map(|p| p.max_component()).fold(1.0, f64::max);
    10.0 * (peak * peak / mse).log10()
}

pub struct NoiseToNoise {
    pub psnr_trained: f64,
    pub psnr_single_target: f64,
}

/// Train a splat sheet on `steps` independent noisy renditions of a smooth image.
pub fn noise_to_noise(steps: u64, seed: u64) -> NoiseToNoise {
    let res = 32;
    let camera = grid_camera(res);
    let mean: Vec<Rgb> = (0..res * res)
        .map(|i| {
            let (x, y) = ((i % res) as f64 / res as f64, (i / res) as f64 / res as f64);
            Rgb::new(0.6 + 0.3 * (3.0 * x).sin(), 0.5 + 0.3 * y, 0.4 + 0.2 * (x * y * 6.0).cos())
        })
        .collect();
    let mut level = splat_sheet(10, 0.12, 0.6, 0.5);
    let mut moments = LevelMoments::for_level(&level);
    let cfg = TrainerConfig::default();
    let mut rng = Rng::new(seed);
    let valid = vec![true; res * res];
    let noisy = |rng: &mut Rng| -> Vec<Rgb> {
        // Exponential multiplicative noise: unit mean, unit variance per pixel.
        mean.iter().map(|m| *m * -(1.0 - rng.next_f64()).ln()).collect()
    };
    let single = noisy(&mut rng);
    for t in 1..=steps {
        let target = noisy(&mut rng);
        let lr = cfg.lr.scaled(lr_schedule(1.0, t as f64));
        fit_level(&mut level, &camera, &target, &valid, &mut moments, &lr, &cfg);
    }
    let img = rasterize(&level, &camera);
    NoiseToNoise { psnr_trained: psnr_vs(&img.rgb, &mean), psnr_single_target: psnr_vs(&single, &mean) }
}

pub struct ScalarFit {
    /// Mean of the last fifth of the trajectory.
    pub final_value: f64,
    pub target_mean: f64,
}

/// Fit one splat's color at a single pixel to i.i.d. exponential targets of mean `mu`.
pub fn scalar_fit(mu: f64, steps: u64, seed: u64, weight_decay: f64) -> ScalarFit {
    let camera = grid_camera(1);
    let mut level = GaussianLevel::default();
    level.push(Vec3::ZERO, [1.0, 0.0, 0.0, 0.0], Vec3::splat(0.0), 0.95, Rgb::splat(0.2));
    let mut moments = LevelMoments::for_level(&level);
    let cfg = TrainerConfig { weight_decay, ..TrainerConfig::default() };
    let base = LearningRates { position: 0.0, rotation: 0.0, scaling: 0.0, opacity: 0.0, ..cfg.lr };
    let mut rng = Rng::new(seed);
    let mut targets = Vec::new();
    let mut tail = Vec::new();
    for t in 1..=steps {
        let x = mu * -(1.0 - rng.next_f64()).ln();
        targets.push(x);
        fit_level(&mut level, &camera, &[Rgb::splat(x)], &[true], &mut moments, &base.scaled(lr_schedule(1.0, t as f64)), &cfg);
        if t > steps - steps / 5 {
            tail.push(rasterize(&level, &camera).rgb[0].x);
        }
    }
    let final_value = tail.iter().sum::<f64>() / tail.len() as f64;
    ScalarFit { final_value, target_mean: targets.iter().sum::<f64>() / targets.len() as f64 }
}

/// Train a splat sheet for `steps` frames on sparse firefly targets and return the
/// largest splat scale relative to the sheet diagonal.
pub fn firefly_blowup(weight_decay: f64, scaling_lr: f64, steps: u64, seed: u64) -> f64 {
    let res = 32;
    let camera = grid_camera(res);
    let mut level = splat_sheet(6, 0.1, 0.3, 0.5);
    let mut moments = LevelMoments::for_level(&level);
    let mut cfg = TrainerConfig { weight_decay, ..TrainerConfig::default() };
    cfg.lr.scaling = scaling_lr;
    let mut rng = Rng::new(seed);
    let valid = vec![true; res * res];
    for t in 1..=steps {
        let target: Vec<Rgb> =
            (0..res * res).map(|_| if rng.next_f64() < 0.02 { Rgb::splat(50.0) } else { Rgb::ZERO }).collect();
        fit_level(&mut level, &camera, &target, &valid, &mut moments, &cfg.lr.scaled(lr_schedule(1.0, t as f64)), &cfg);
    }
    level.max_scale() / (2.0 * 2f64.sqrt())
}
