//! Volumetric path tracing: a uniform phase-sampling integrator and a
//! next-event-estimation integrator that can hand the tail of a path to the
//! splat cache.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::LevelImageSet;
use crate::error::{Error, Result};
use crate::math::{Ray, Rgb, Vec3};
use crate::policy::{cache_read, luminance, termination_step, BetaConvention, PathState, PolicyConfig};
use crate::rng::Rng;
use crate::scene::Scene;

pub const MAX_DEPTH: usize = 32;
pub const PHASE_PDF: f64 = 1.0 / (4.0 * PI);
const TILE: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Uniform,
    #[default]
    Nee,
}

impl std::str::FromStr for Integrator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "nee" => Ok(Self::Nee),
            o => Err(Error::Config(format!("unknown integrator `{o}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationKind {
    Natural,
    EarlyCacheHit,
    /// Depth cap reached; the tail is dropped.
    CacheMissContinueExhausted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadianceSample {
    pub rgb: Rgb,
    pub terminal_depth: usize,
    pub kind: TerminationKind,
}

/// Noisy estimate of the radiance a path carries beyond vertex `level + 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingRecord {
    pub pixel: (usize, usize),
    pub level: usize,
    pub value: Rgb,
}

/// Which level a path should record into and how to attenuate it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecordRequest {
    /// Vertex index (1-based) whose tail is recorded.
    pub depth: usize,
    pub convention: BetaConvention,
}

/// Cache images and policy for one frame.
#[derive(Clone, Copy, Debug)]
pub struct CacheContext<'a> {
    pub policy: &'a PolicyConfig,
    pub images: &'a LevelImageSet,
    pub frame: u64,
}

enum Segment {
    Collision(crate::volume::Interaction),
    Light(usize),
    Escape,
}

fn next_segment(scene: &Scene, ray: &Ray, rng: &mut Rng) -> Segment {
    let light = scene.hit_light(ray);
    let t_max = light.map_or(f64::INFINITY, |(_, t)| t);
    match scene.medium.delta_track(ray, t_max, rng) {
        Some(i) => Segment::Collision(i),
        None => match light {
            Some((j, _)) => Segment::Light(j),
            None => Segment::Escape,
        },
    }
}

/// Balance-heuristic weights of (light sampling, phase sampling) for densities `p_light`, `p_phase`.
pub fn mis_weights(p_light: f64, p_phase: f64) -> (f64, f64) {
    let s = p_light + p_phase;
    if s <= 0.0 {
        return (0.0, 0.0);
    }
    (p_light / s, p_phase / s)
}

/// Light-sampling half of the MIS estimate of in-scattered radiance at `x`, per unit throughput.
fn sample_light(scene: &Scene, x: Vec3, rng: &mut Rng) -> Rgb {
    let n = scene.lights.len();
    if n == 0 {
        return Rgb::ZERO;
    }
    let light = &scene.lights[rng.next_below(n)];
    let Ok(s) = light.sample(x, rng) else {
        return Rgb::ZERO;
    };
    let p_light = s.pdf / n as f64;
    let (w, _) = mis_weights(p_light, PHASE_PDF);
    let visible = scene.medium.transmittance_visibility(x, x + s.direction * s.distance, rng);
    if visible == 0 {
        return Rgb::ZERO;
    }
    s.emitted * (PHASE_PDF * w / p_light)
}

fn primary_ray(scene: &Scene, pixel: (usize, usize), rng: &mut Rng) -> Ray {
    let jitter = (rng.next_f64(), rng.next_f64());
    scene.camera.primary_ray(pixel, jitter)
}

/// Phase sampling only; emitters and the background are found by escaping rays.
pub fn trace_uniform(scene: &Scene, pixel: (usize, usize), rng: &mut Rng, max_depth: usize) -> RadianceSample {
    let mut ray = primary_ray(scene, pixel, rng);
    let mut throughput = Rgb::ONE;
    let mut depth = 0;
    loop {
        match next_segment(scene, &ray, rng) {
            Segment::Escape => {
                return RadianceSample { rgb: throughput.mul_elem(scene.background), terminal_depth: depth, kind: TerminationKind::Natural }
            }
            Segment::Light(j) => {
                let e = scene.lights[j].emission;
                return RadianceSample { rgb: throughput.mul_elem(e), terminal_depth: depth, kind: TerminationKind::Natural };
            }
            Segment::Collision(i) => {
                if depth == max_depth {
                    return RadianceSample { rgb: Rgb::ZERO, terminal_depth: depth, kind: TerminationKind::CacheMissContinueExhausted };
                }
                depth += 1;
                throughput = throughput.mul_elem(i.albedo);
                ray = Ray::new(i.position, rng.next_unit_vector());
            }
        }
    }
}

/// Accumulates the part of a path's radiance gathered after the recorded vertex.
struct Recorder {
    req: RecordRequest,
    beta_at: Option<f64>,
    tail: Rgb,
}

impl Recorder {
    fn add(&mut self, value: Rgb, after: bool, state: &PathState) {
        let Some(beta_d) = self.beta_at else { return };
        if !after {
            return;
        }
        let scale = match self.req.convention {
            BetaConvention::StoreRaw => beta_d / state.beta,
            BetaConvention::StoreBoosted => 1.0 / state.beta,
        };
        self.tail += value * scale;
    }
}

/// Next-event estimation with MIS, optionally terminated early into the cache.
///
/// A record, when requested, is returned whenever the path reaches vertex
/// `record.depth`: it carries everything gathered after that vertex's
/// next-event estimate, with later lottery survivals compensated.
pub fn trace_nee(
    scene: &Scene,
    pixel: (usize, usize),
    rng: &mut Rng,
    cache: Option<&CacheContext>,
    record: Option<RecordRequest>,
    max_depth: usize,
) -> Result<(RadianceSample, Option<TrainingRecord>)> {
    let mut ray = primary_ray(scene, pixel, rng);
    let mut state = PathState::new(pixel);
    let mut radiance = Rgb::ZERO;
    let mut rec = record.map(|req| Recorder { req, beta_at: None, tail: Rgb::ZERO });
    let n_lights = scene.lights.len() as f64;
    let kind = loop {
        match next_segment(scene, &ray, rng) {
            seg @ (Segment::Escape | Segment::Light(_)) => {
                let le = match seg {
                    Segment::Light(j) if state.depth == 0 => scene.lights[j].emission,
                    Segment::Light(j) => {
                        let p_light = scene.lights[j].pdf(ray.origin, ray.dir) / n_lights;
                        scene.lights[j].emission * mis_weights(p_light, PHASE_PDF).1
                    }
                    _ => scene.background,
                };
                let c = state.throughput_raw.mul_elem(le);
                radiance += c;
                if let Some(r) = rec.as_mut() {
                    r.add(c, state.depth >= r.req.depth, &state);
                }
                if let Some(ctx) = cache {
                    if ctx.policy.natural_substitution && state.depth >= 1 && luminance(le) <= 0.0 {
                        radiance += cache_read(ctx.images, ctx.frame, pixel, state.depth, state.beta, ctx.policy)?;
                    }
                }
                break TerminationKind::Natural;
            }
            Segment::Collision(i) => {
                if state.depth == max_depth {
                    break TerminationKind::CacheMissContinueExhausted;
                }
                state.scatter(i.albedo);
                let c = state.throughput_raw.mul_elem(sample_light(scene, i.position, rng));
                radiance += c;
                if let Some(r) = rec.as_mut() {
                    r.add(c, state.depth > r.req.depth, &state);
                    if state.depth == r.req.depth {
                        r.beta_at = Some(state.beta);
                    }
                }
                if let Some(ctx) = cache {
                    let d = termination_step(&state, ctx.policy, rng);
                    if d.terminate {
                        radiance += cache_read(ctx.images, ctx.frame, pixel, state.depth, state.beta, ctx.policy)?;
                        break TerminationKind::EarlyCacheHit;
                    }
                    state.apply(&d);
                }
                ray = Ray::new(i.position, rng.next_unit_vector());
            }
        }
    };
    let record = rec.and_then(|r| {
        r.beta_at.map(|_| TrainingRecord { pixel, level: r.req.depth - 1, value: r.tail })
    });
    Ok((RadianceSample { rgb: radiance, terminal_depth: state.depth, kind }, record))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameBuffer {
    pub width: usize,
    pub height: usize,
    pub accum: Vec<Rgb>,
    pub count: Vec<u32>,
}

impl FrameBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, accum: vec![Rgb::ZERO; width * height], count: vec![0; width * height] }
    }

    pub fn mean(&self) -> Vec<Rgb> {
        self.accum.iter().zip(&self.count).map(|(a, &n)| if n > 0 { *a / n as f64 } else { Rgb::ZERO }).collect()
    }

    pub fn merge(&mut self, other: &FrameBuffer) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for i in 0..self.accum.len() {
            self.accum[i] += other.accum[i];
            self.count[i] += other.count[i];
        }
    }
}

/// Per-pixel training targets; each pixel holds at most one level's entry per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBufferSet {
    pub frame: u64,
    pub width: usize,
    pub height: usize,
    pub levels: usize,
    pub entries: Vec<Option<(usize, Rgb)>>,
}

impl PathBufferSet {
    pub fn new(frame: u64, width: usize, height: usize, levels: usize) -> Self {
        Self { frame, width, height, levels, entries: vec![None; width * height] }
    }

    /// Target image and validity mask for one level.
    pub fn level_target(&self, level: usize) -> (Vec<Rgb>, Vec<bool>) {
        self.entries
            .iter()
            .map(|e| match e {
                Some((l, v)) if *l == level => (*v, true),
                _ => (Rgb::ZERO, false),
            })
            .unzip()
    }

    pub fn valid_count(&self, level: usize) -> usize {
        self.entries.iter().filter(|e| matches!(e, Some((l, _)) if *l == level)).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub seed: u64,
    pub frame: u64,
    pub spp: usize,
    /// Index of the first sample; lets several passes share one sample sequence.
    pub sample_offset: u64,
    pub integrator: Integrator,
    pub max_depth: usize,
    /// Number of cache levels to collect training records for (0 disables).
    pub record_levels: usize,
    pub record_convention: BetaConvention,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            frame: 0,
            spp: 1,
            sample_offset: 0,
            integrator: Integrator::Nee,
            max_depth: MAX_DEPTH,
            record_levels: 0,
            record_convention: BetaConvention::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameStats {
    pub paths: u64,
    pub depth_sum: u64,
    pub early_hits: u64,
    pub capped: u64,
    pub nonfinite: u64,
}

impl FrameStats {
    pub fn mean_depth(&self) -> f64 {
        if self.paths == 0 {
            0.0
        } else {
            self.depth_sum as f64 / self.paths as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub buffer: FrameBuffer,
    pub paths: PathBufferSet,
    pub stats: FrameStats,
}

/// Per-sample RNG stream used by `render_frame`.
pub fn sample_rng(settings: &RenderSettings, pixel_index: usize, sample: u64) -> Rng {
    Rng::for_sample(settings.seed, settings.frame, pixel_index as u64, sample)
}

pub fn render_frame(scene: &Scene, settings: &RenderSettings, cache: Option<&CacheContext>) -> Result<FrameOutput> {
    if settings.spp == 0 {
        return Err(Error::Config("spp must be at least 1".into()));
    }
    if let Some(ctx) = cache {
        if ctx.images.frame != ctx.frame {
            return Err(Error::StaleFrame { expected: ctx.frame, found: ctx.images.frame });
        }
        let levels = ctx.images.images.len();
        if levels < ctx.policy.max_cache_length {
            return Err(Error::Config(format!("{} cache images for {} levels", levels, ctx.policy.max_cache_length)));
        }
    }
    let (w, h) = scene.camera.resolution;
    let tiles_x = w.div_ceil(TILE);
    let n_tiles = tiles_x * h.div_ceil(TILE);
    type PixelOut = (usize, Rgb, u32, Option<TrainingRecord>, FrameStats);
    let tiles: Vec<Result<Vec<PixelOut>>> = (0..n_tiles)
        .into_par_iter()
        .map(|t| {
            let (x0, y0) = ((t % tiles_x) * TILE, (t / tiles_x) * TILE);
            let mut out = Vec::with_capacity(TILE * TILE);
            for y in y0..(y0 + TILE).min(h) {
                for x in x0..(x0 + TILE).min(w) {
                    let idx = y * w + x;
                    let mut sum = Rgb::ZERO;
                    let mut stats = FrameStats::default();
                    let mut record = None;
                    for s in 0..settings.spp as u64 {
                        let sample = settings.sample_offset + s;
                        let mut rng = sample_rng(settings, idx, sample);
                        let r = match settings.integrator {
                            Integrator::Uniform => trace_uniform(scene, (x, y), &mut rng, settings.max_depth),
                            Integrator::Nee => {
                                let req = (s == 0 && settings.record_levels > 0).then(|| RecordRequest {
                                    depth: 1 + sample_rng(settings, idx, u64::MAX).next_below(settings.record_levels),
                                    convention: settings.record_convention,
                                });
                                let (r, rec) = trace_nee(scene, (x, y), &mut rng, cache, req, settings.max_depth)?;
                                if rec.is_some() {
                                    record = rec;
                                }
                                r
                            }
                        };
                        stats.paths += 1;
                        stats.depth_sum += r.terminal_depth as u64;
                        match r.kind {
                            TerminationKind::EarlyCacheHit => stats.early_hits += 1,
                            TerminationKind::CacheMissContinueExhausted => stats.capped += 1,
                            TerminationKind::Natural => {}
                        }
                        if r.rgb.is_finite() && r.rgb.min_elem(Rgb::ZERO) == Rgb::ZERO {
                            sum += r.rgb;
                        } else {
                            stats.nonfinite += 1;
                        }
                    }
                    let record = record.filter(|r| r.value.is_finite());
                    out.push((idx, sum, settings.spp as u32, record, stats));
                }
            }
            Ok(out)
        })
        .collect();
    let mut buffer = FrameBuffer::new(w, h);
    let mut paths = PathBufferSet::new(settings.frame, w, h, settings.record_levels);
    let mut stats = FrameStats::default();
    for tile in tiles {
        for (idx, sum, n, rec, s) in tile? {
            buffer.accum[idx] = sum;
            buffer.count[idx] = n;
            paths.entries[idx] = rec.map(|r| (r.level, r.value));
            stats.paths += s.paths;
            stats.depth_sum += s.depth_sum;
            stats.early_hits += s.early_hits;
            stats.capped += s.capped;
            stats.nonfinite += s.nonfinite;
        }
    }
    Ok(FrameOutput { buffer, paths, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Camera, SphereLight};
    use crate::volume::{Medium, Procedural, TransferFunction};
    use std::sync::Arc;

    fn scene(value: f64, ext: f64, albedo: f64, lights: Vec<SphereLight>, bg: Rgb) -> Scene {
        let field = Procedural::Constant { resolution: 4, value }.build().unwrap();
        let medium = Medium::new(Arc::new(field), TransferFunction::constant(ext, Rgb::splat(albedo)));
        let cam = Camera::new(Vec3::new(0.5, 0.5, -3.0), Vec3::new(0.5, 0.5, 0.5), Vec3::new(0.0, 1.0, 0.0), 0.5, (9, 9)).unwrap();
        Scene::new(cam, lights, bg, Arc::new(medium)).unwrap()
    }

    #[test]
    fn mis_weights_sum_to_one() {
        for (a, b) in [(0.1, 0.3), (5.0, PHASE_PDF), (1e-9, 1e3)] {
            let (x, y) = mis_weights(a, b);
            assert!((x + y - 1.0).abs() < 1e-15);
        }
        assert_eq!(mis_weights(0.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn vacuum_sees_light_or_black() {
        let light = SphereLight { center: Vec3::new(0.5, 0.5, 3.0), radius: 0.3, emission: Rgb::new(4.0, 3.0, 2.0) };
        let s = scene(0.0, 0.0, 0.5, vec![light], Rgb::ZERO);
        let mut rng = Rng::new(1);
        let center = trace_uniform(&s, (4, 4), &mut rng, MAX_DEPTH);
        assert_eq!(center.rgb, light.emission);
        let corner = trace_uniform(&s, (0, 0), &mut rng, MAX_DEPTH);
        assert_eq!(corner.rgb, Rgb::ZERO);
        let (nee, _) = trace_nee(&s, (4, 4), &mut rng, None, None, MAX_DEPTH).unwrap();
        assert_eq!(nee.rgb, light.emission);
    }

    #[test]
    fn zero_cap_keeps_only_unscattered_light() {
        let s = scene(1.0, 1.0, 0.9, vec![], Rgb::ONE);
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let r = trace_uniform(&s, (4, 4), &mut rng, 0);
            assert!(r.rgb == Rgb::ONE || r.rgb == Rgb::ZERO);
            assert_eq!(r.terminal_depth, 0);
        }
    }

    #[test]
    fn render_is_deterministic_and_accumulates() {
        let light = SphereLight { center: Vec3::new(2.0, 2.0, -1.0), radius: 0.5, emission: Rgb::splat(10.0) };
        let s = scene(0.6, 3.0, 0.8, vec![light], Rgb::splat(0.1));
        let base = RenderSettings { seed: 5, frame: 2, record_levels: 3, ..RenderSettings::default() };
        let a = render_frame(&s, &base, None).unwrap();
        let b = render_frame(&s, &base, None).unwrap();
        assert_eq!(a.buffer, b.buffer);
        assert_eq!(a.paths, b.paths);
        let four = render_frame(&s, &RenderSettings { spp: 4, ..base }, None).unwrap();
        let mut acc = FrameBuffer::new(9, 9);
        for k in 0..4 {
            acc.merge(&render_frame(&s, &RenderSettings { sample_offset: k, ..base }, None).unwrap().buffer);
        }
        for (x, y) in four.buffer.mean().iter().zip(acc.mean()) {
            assert!((*x - y).length() < 1e-12);
        }
        assert_eq!(four.paths, a.paths);
    }

    #[test]
    fn records_hold_one_level_per_pixel() {
        let s = scene(0.6, 3.0, 0.8, vec![], Rgb::ONE);
        let out = render_frame(&s, &RenderSettings { record_levels: 3, ..RenderSettings::default() }, None).unwrap();
        let total: usize = (0..3).map(|l| out.paths.valid_count(l)).sum();
        assert_eq!(total, out.paths.entries.iter().filter(|e| e.is_some()).count());
        assert!(total > 0);
    }
}
