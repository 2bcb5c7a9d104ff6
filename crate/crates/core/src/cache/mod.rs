//! The multi-level splat cache: initialization from the medium, level
//! sub-sampling, per-frame rasterization and snapshots.

mod knn;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::gsplat::{rasterize, read_level_blob, write_level_blob, GaussianLevel, SplatImage};
use crate::math::{Ray, Rgb, Vec3};
use crate::rng::Rng;
use crate::scene::Camera;
use crate::volume::Medium;

pub use knn::Grid;

pub const INITIAL_OPACITY: f64 = 0.1;
const INIT_MAX_ATTEMPTS: usize = 1_000_000;
const INIT_MIN_ACCEPTANCE: f64 = 1e-4;
const INIT_BATCH: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    pub n: usize,
    pub k: usize,
    pub init_scale_factor: f64,
    pub z_cap: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { n: 30_000, k: 2, init_scale_factor: 0.5, z_cap: 2.0 }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < self.k + 1 {
            return Err(Error::InvalidCacheConfig(format!("N={} must be at least K+1={}", self.n, self.k + 1)));
        }
        if !(self.init_scale_factor > 0.0) || !(self.z_cap >= 0.0) {
            return Err(Error::InvalidCacheConfig("scale factor must be positive and z cap non-negative".into()));
        }
        Ok(())
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.n >> level
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheHierarchy {
    pub config: CacheConfig,
    pub levels: Vec<GaussianLevel>,
    pub seed: u64,
    pub init_ms: f64,
}

/// Rasterized cache images for one frame, one per level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelImageSet {
    pub frame: u64,
    pub images: Vec<SplatImage>,
    pub splat_ms: Vec<f64>,
}

/// Collect `n` collision points by tracking random chords of the bounding sphere.
pub fn sample_medium_points(medium: &Medium, n: usize, rng: &Rng) -> Result<Vec<(Vec3, Rgb)>> {
    let bounds = medium.bounds();
    let center = bounds.center();
    let radius = 0.5 * bounds.diagonal();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let mut batch = 0u64;
    while out.len() < n {
        let hits: Vec<Option<(Vec3, Rgb)>> = (0..INIT_BATCH as u64)
            .into_par_iter()
            .map(|j| {
                let mut r = rng.derive(batch * INIT_BATCH as u64 + j);
                let a = center + r.next_unit_vector() * radius;
                let b = center + r.next_unit_vector() * radius;
                let len = (b - a).length();
                if len <= 0.0 {
                    return None;
                }
                let ray = Ray::new(a, (b - a) / len);
                medium.delta_track(&ray, len, &mut r).map(|i| (i.position, i.albedo))
            })
            .collect();
        for h in hits.into_iter() {
            attempts += 1;
            if let Some(h) = h {
                out.push(h);
                if out.len() == n {
                    break;
                }
            }
        }
        batch += 1;
        if attempts >= INIT_MAX_ATTEMPTS && (out.len() as f64) < INIT_MIN_ACCEPTANCE * attempts as f64 {
            return Err(Error::DegenerateInitialization { accepted: out.len(), attempts });
        }
    }
    Ok(out)
}

/// Isotropic per-point scales from the mean distance to the three nearest neighbors,
/// with outliers capped at `z_cap` standard deviations above the mean.
pub fn scale_rule(positions: &[Vec3], factor: f64, z_cap: f64, floor: f64) -> Result<Vec<f64>> {
    if positions.len() < 4 {
        return Err(Error::InvalidCacheConfig(format!("scale rule needs at least 4 points, got {}", positions.len())));
    }
    Ok(scales_for(positions, factor, z_cap, floor))
}

fn scales_for(positions: &[Vec3], factor: f64, z_cap: f64, floor: f64) -> Vec<f64> {
    let n = positions.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![floor.max(1e-6)];
    }
    let k = 3.min(n - 1);
    let grid = Grid::new(positions);
    let raw: Vec<f64> = (0..n).into_par_iter().map(|i| grid.nearest(i, k).iter().sum::<f64>() / k as f64).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let var = raw.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    let cap = mean + z_cap * var.sqrt();
    raw.iter().map(|&r| (r.min(cap) * factor).max(floor)).collect()
}

pub fn initialize_cache(medium: &Medium, config: &CacheConfig, seed: u64) -> Result<CacheHierarchy> {
    config.validate()?;
    let start = Instant::now();
    let rng = Rng::new(seed);
    let samples = sample_medium_points(medium, config.n, &rng.derive(0))?;
    let perm = rng.derive(1).permutation(samples.len());
    let floor = 1e-6 * medium.bounds().diagonal();
    let levels = (0..=config.k)
        .map(|lvl| {
            let stride = 1usize << lvl;
            let chosen: Vec<(Vec3, Rgb)> =
                (0..config.level_size(lvl)).map(|j| samples[if lvl == 0 { j } else { perm[j * stride] }]).collect();
            let positions: Vec<Vec3> = chosen.iter().map(|c| c.0).collect();
            let scales = scales_for(&positions, config.init_scale_factor, config.z_cap, floor);
            let mut level = GaussianLevel::default();
            for ((p, albedo), s) in chosen.into_iter().zip(scales) {
                level.push(p, [1.0, 0.0, 0.0, 0.0], Vec3::splat(s.ln()), INITIAL_OPACITY, albedo);
            }
            level
        })
        .collect();
    Ok(CacheHierarchy { config: *config, levels, seed, init_ms: start.elapsed().as_secs_f64() * 1e3 })
}

/// Rasterize every level for `camera` at `resolution`.
pub fn splat_all_levels(hierarchy: &CacheHierarchy, camera: &Camera, resolution: (usize, usize), frame: u64) -> LevelImageSet {
    let mut cam = camera.clone();
    cam.resolution = resolution;
    let mut images = Vec::with_capacity(hierarchy.levels.len());
    let mut splat_ms = Vec::with_capacity(hierarchy.levels.len());
    for level in &hierarchy.levels {
        let t = Instant::now();
        images.push(rasterize(level, &cam));
        splat_ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    LevelImageSet { frame, images, splat_ms }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    init_ms: f64,
    config: CacheConfig,
    levels: Vec<ManifestLevel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLevel {
    file: String,
    count: usize,
}

impl CacheHierarchy {
    pub fn total_splats(&self) -> usize {
        self.levels.iter().map(GaussianLevel::len).sum()
    }

    pub fn footprint_bytes(&self) -> usize {
        self.levels.iter().map(GaussianLevel::footprint_bytes).sum()
    }

    /// Write `manifest.toml` plus one blob per level into `dir`.
    pub fn snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let mut levels = Vec::new();
        for (i, level) in self.levels.iter().enumerate() {
            let file = format!("level_{i}.bin");
            write_level_blob(&dir.join(&file), level)?;
            levels.push(ManifestLevel { file, count: level.len() });
        }
        let manifest = Manifest { seed: self.seed, init_ms: self.init_ms, config: self.config, levels };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        let path = dir.join("manifest.toml");
        std::fs::write(&path, text).at(path)
    }

    pub fn restore(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let manifest: Manifest = toml::from_str(&std::fs::read_to_string(&path).at(&path)?)?;
        let mut levels = Vec::new();
        for entry in &manifest.levels {
            let level = read_level_blob(&dir.join(&entry.file))?;
            if level.len() != entry.count {
                return Err(Error::InvalidBlob(format!("{}: manifest says {} splats, blob has {}", entry.file, entry.count, level.len())));
            }
            levels.push(level);
        }
        Ok(Self { config: manifest.config, levels, seed: manifest.seed, init_ms: manifest.init_ms })
    }
}
