//! Experiment driver: configs, the per-frame render/train/splat pipeline,
//! metrics, image output and summaries.

mod image;
mod summary;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cache::{initialize_cache, splat_all_levels, CacheConfig, CacheHierarchy};
use crate::error::{Error, IoContext, Result};
use crate::math::Rgb;
use crate::pathtracer::{render_frame, CacheContext, FrameStats, Integrator, RenderSettings, MAX_DEPTH};
use crate::policy::PolicyConfig;
use crate::scene::{CameraConfig, CameraPath, Scene, SceneConfig, SphereLight, TransferSource, VolumeSource};
use crate::trainer::{train_step, OptimizerState, ScheduleState, TrainStats, TrainerConfig};
use crate::volume::{ControlPoint, Procedural};

pub use image::{psnr, read_pfm, rmse, tonemap, write_pfm, write_png, Image, PSNR_CAP};
pub use summary::{read_metrics, render_report, summarize, write_metrics, write_summary_csv, SummaryRow};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "nee")]
    Nee,
    #[default]
    #[serde(rename = "nee+cache", alias = "nee_cache")]
    NeeCache,
    #[serde(rename = "reference")]
    Reference,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Uniform => "uniform",
            Mode::Nee => "nee",
            Mode::NeeCache => "nee+cache",
            Mode::Reference => "reference",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Mode::Uniform),
            "nee" => Ok(Mode::Nee),
            "nee+cache" | "nee_cache" | "cache" => Ok(Mode::NeeCache),
            "reference" => Ok(Mode::Reference),
            o => Err(Error::Config(format!("unknown mode `{o}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scene file; the built-in procedural scene when absent.
    pub scene: Option<PathBuf>,
    pub mode: Mode,
    pub resolution: Option<[usize; 2]>,
    pub spp: usize,
    pub frames: u64,
    /// Leading frames excluded from summaries.
    pub warmup: u64,
    pub seed: u64,
    pub output: PathBuf,
    /// A reference PFM, or a directory of per-frame `reference_NNNN.pfm` files.
    pub reference: Option<PathBuf>,
    pub write_images: bool,
    pub max_depth: usize,
    pub policy: PolicyConfig,
    pub cache: CacheConfig,
    /// Restore the cache from a snapshot directory instead of initializing it.
    pub cache_snapshot: Option<PathBuf>,
    pub trainer: TrainerConfig,
    /// Overrides the scene's camera script.
    pub camera_path: Option<CameraPath>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: None,
            mode: Mode::NeeCache,
            resolution: None,
            spp: 1,
            frames: 1,
            warmup: 0,
            seed: 0,
            output: PathBuf::from("out"),
            reference: None,
            write_images: true,
            max_depth: MAX_DEPTH,
            policy: PolicyConfig::default(),
            cache: CacheConfig { n: 20_000, k: 2, ..CacheConfig::default() },
            cache_snapshot: None,
            trainer: TrainerConfig::default(),
            camera_path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load and resolve relative paths against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path).at(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.scene, &mut cfg.reference, &mut cfg.cache_snapshot].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        if cfg.output.is_relative() {
            cfg.output = dir.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("frames must be at least 1".into()));
        }
        if self.spp == 0 {
            return Err(Error::Config("spp must be at least 1".into()));
        }
        if self.mode == Mode::NeeCache {
            self.cache.validate()?;
            self.policy.validate()?;
            if self.policy.max_cache_length != self.cache.k + 1 {
                return Err(Error::Config(format!(
                    "policy.max_cache_length = {} but the cache has K+1 = {} levels",
                    self.policy.max_cache_length,
                    self.cache.k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn scene_config(&self) -> Result<SceneConfig> {
        let mut sc = match &self.scene {
            Some(p) => SceneConfig::load(p)?,
            None => desk_scene_config(),
        };
        if let Some(r) = self.resolution {
            sc.camera.resolution = r;
        }
        if let Some(path) = &self.camera_path {
            sc.camera_path = path.clone();
        }
        Ok(sc)
    }
}

/// Built-in procedural test scene: a fractal cloud in the unit cube lit by one sphere light.
pub fn desk_scene_config() -> SceneConfig {
    SceneConfig {
        camera: CameraConfig {
            position: [0.5, 0.55, -1.3],
            look_at: [0.5, 0.5, 0.5],
            up: [0.0, 1.0, 0.0],
            vertical_fov_deg: 40.0,
            resolution: [256, 256],
        },
        lights: vec![SphereLight { center: crate::math::Vec3::new(2.2, 2.4, -0.6), radius: 0.5, emission: Rgb::splat(150.0) }],
        background: [0.05, 0.06, 0.08],
        volume: VolumeSource::Procedural(Procedural::Fractal { resolution: 128, octaves: 4, seed: 7 }),
        transfer: TransferSource::Inline {
            point: vec![
                ControlPoint { scalar: 0.0, albedo: [0.9, 0.9, 0.9], extinction: 0.0 },
                ControlPoint { scalar: 0.25, albedo: [0.92, 0.9, 0.86], extinction: 0.0 },
                ControlPoint { scalar: 0.6, albedo: [0.95, 0.92, 0.88], extinction: 18.0 },
                ControlPoint { scalar: 1.0, albedo: [0.97, 0.95, 0.9], extinction: 30.0 },
            ],
        },
        camera_path: CameraPath::default(),
    }
}

/// Mutable cache state carried across frames.
#[derive(Clone, Debug)]
pub struct CacheState {
    pub hierarchy: CacheHierarchy,
    pub optimizer: OptimizerState,
    pub schedule: ScheduleState,
}

/// One frame's image and stage timings.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub frame: u64,
    pub image: Image,
    pub pt_ms: f64,
    pub st_ms: f64,
    pub ot_ms: f64,
    pub stats: FrameStats,
    pub train: Option<TrainStats>,
}

/// The frame pipeline for one experiment: splat, render, train.
pub struct Session {
    pub scene: Scene,
    pub path: CameraPath,
    pub cfg: ExperimentConfig,
    pub cache: Option<CacheState>,
}

impl Session {
    pub fn new(scene: Scene, path: CameraPath, cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let cache = if cfg.mode == Mode::NeeCache {
            let hierarchy = match &cfg.cache_snapshot {
                Some(dir) => CacheHierarchy::restore(dir)?,
                None => initialize_cache(&scene.medium, &cfg.cache, cfg.seed)?,
            };
            if hierarchy.levels.len() != cfg.policy.max_cache_length {
                return Err(Error::Config("cache snapshot level count does not match the policy".into()));
            }
            let optimizer = OptimizerState::for_hierarchy(&hierarchy);
            Some(CacheState { hierarchy, optimizer, schedule: ScheduleState::default() })
        } else {
            None
        };
        Ok(Self { scene, path, cfg, cache })
    }

    pub fn from_config(cfg: ExperimentConfig) -> Result<Self> {
        let sc = cfg.scene_config()?;
        let scene = sc.build()?;
        Self::new(scene, sc.camera_path, cfg)
    }

    pub fn render(&mut self, frame: u64) -> Result<FrameResult> {
        let camera = self.path.camera_at(&self.scene.camera, frame);
        let scene = self.scene.with_camera(camera);
        let res = camera.resolution;
        let mut settings = RenderSettings {
            seed: self.cfg.seed,
            frame,
            spp: self.cfg.spp,
            integrator: if self.cfg.mode == Mode::Uniform { Integrator::Uniform } else { Integrator::Nee },
            max_depth: self.cfg.max_depth,
            ..RenderSettings::default()
        };
        let Some(cache) = self.cache.as_mut() else {
            let t = Instant::now();
            let out = render_frame(&scene, &settings, None)?;
            let pt_ms = t.elapsed().as_secs_f64() * 1e3;
            let image = Image::new(res.0, res.1, out.buffer.mean());
            return Ok(FrameResult { frame, image, pt_ms, st_ms: 0.0, ot_ms: 0.0, stats: out.stats, train: None });
        };
        let t = Instant::now();
        let images = splat_all_levels(&cache.hierarchy, &camera, res, frame);
        let st_ms = t.elapsed().as_secs_f64() * 1e3;

        settings.record_levels = cache.hierarchy.levels.len();
        settings.record_convention = self.cfg.policy.beta_convention;
        let ctx = CacheContext { policy: &self.cfg.policy, images: &images, frame };
        let t = Instant::now();
        let out = render_frame(&scene, &settings, Some(&ctx))?;
        let pt_ms = t.elapsed().as_secs_f64() * 1e3;

        let diagonal = scene.medium.bounds().diagonal();
        let residency = cache.schedule.observe(&camera, diagonal, &self.cfg.trainer);
        let train = train_step(&mut cache.hierarchy, &out.paths, &camera, frame, residency, &mut cache.optimizer, &self.cfg.trainer)?;
        let image = Image::new(res.0, res.1, out.buffer.mean());
        Ok(FrameResult { frame, image, pt_ms, st_ms, ot_ms: train.total_ms, stats: out.stats, train: Some(train) })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub frame: u64,
    pub mode: String,
    pub c: f64,
    pub spp: usize,
    pub seed: u64,
    pub psnr: Option<f64>,
    pub rmse: Option<f64>,
    pub mean_luminance: f64,
    pub pt_ms: f64,
    pub st_ms: f64,
    pub ot_ms: f64,
    pub mean_depth: f64,
    pub early_fraction: f64,
    pub loss: Option<f64>,
}

fn reference_path(reference: &Path, frame: u64) -> PathBuf {
    if reference.is_dir() {
        reference.join(format!("reference_{frame:04}.pfm"))
    } else {
        reference.to_path_buf()
    }
}

pub fn load_reference(reference: &Path, frame: u64) -> Result<Image> {
    let p = reference_path(reference, frame);
    if !p.exists() {
        return Err(Error::MissingReference(p));
    }
    read_pfm(&p)
}

pub fn metrics_row(cfg: &ExperimentConfig, r: &FrameResult, reference: Option<&Image>) -> Result<MetricsRow> {
    let (psnr_v, rmse_v) = match reference {
        Some(refimg) => (Some(psnr(&r.image, refimg)?), Some(rmse(&r.image, refimg)?)),
        None => (None, None),
    };
    let loss = r.train.as_ref().filter(|t| t.trained).map(|t| t.losses.iter().sum::<f64>() / t.losses.len().max(1) as f64);
    Ok(MetricsRow {
        frame: r.frame,
        mode: cfg.mode.as_str().to_owned(),
        c: if cfg.mode == Mode::NeeCache { cfg.policy.c } else { 1.0 },
        spp: cfg.spp,
        seed: cfg.seed,
        psnr: psnr_v,
        rmse: rmse_v,
        mean_luminance: r.image.mean_luminance(),
        pt_ms: r.pt_ms,
        st_ms: r.st_ms,
        ot_ms: r.ot_ms,
        mean_depth: r.stats.mean_depth(),
        early_fraction: r.stats.early_hits as f64 / r.stats.paths.max(1) as f64,
        loss,
    })
}

/// Run every frame of an experiment, writing images and `metrics.csv` to the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let mut session = Session::from_config(cfg.clone())?;
    run_session(&mut session)
}

pub fn run_session(session: &mut Session) -> Result<Vec<MetricsRow>> {
    let cfg = session.cfg.clone();
    std::fs::create_dir_all(&cfg.output).at(&cfg.output)?;
    // Fail before rendering anything when a configured reference is absent.
    if let (Some(r), true) = (&cfg.reference, cfg.mode != Mode::Reference) {
        let p = reference_path(r, 0);
        if !p.exists() {
            return Err(Error::MissingReference(p));
        }
    }
    let mut rows = Vec::with_capacity(cfg.frames as usize);
    for frame in 0..cfg.frames {
        let result = session.render(frame)?;
        let reference = match (&cfg.reference, cfg.mode) {
            (Some(r), m) if m != Mode::Reference => Some(load_reference(r, frame)?),
            _ => None,
        };
        let stem = if cfg.mode == Mode::Reference { "reference" } else { "frame" };
        if cfg.write_images || cfg.mode == Mode::Reference {
            write_pfm(&cfg.output.join(format!("{stem}_{frame:04}.pfm")), &result.image)?;
            write_png(&cfg.output.join(format!("{stem}_{frame:04}.png")), &result.image)?;
        }
        rows.push(metrics_row(&cfg, &result, reference.as_ref())?);
    }
    write_metrics(&cfg.output.join("metrics.csv"), &rows)?;
    Ok(rows)
}

/// One run per value of `C`, each in its own subdirectory.
pub fn sweep_c(base: &ExperimentConfig, cs: &[f64]) -> Result<Vec<MetricsRow>> {
    let mut all = Vec::new();
    for &c in cs {
        let mut cfg = base.clone();
        cfg.mode = Mode::NeeCache;
        cfg.policy.c = c;
        cfg.output = base.output.join(format!("c_{c:.2}"));
        all.extend(run_experiment(&cfg)?);
    }
    finish_sweep(base, &all)?;
    Ok(all)
}

pub fn sweep_spp(base: &ExperimentConfig, spps: &[usize]) -> Result<Vec<MetricsRow>> {
    let mut all = Vec::new();
    for &spp in spps {
        let mut cfg = base.clone();
        cfg.spp = spp;
        cfg.output = base.output.join(format!("spp_{spp}"));
        all.extend(run_experiment(&cfg)?);
    }
    finish_sweep(base, &all)?;
    Ok(all)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Cascade division on and off.
    BetaDivision,
    /// Weight decay 1e-2 versus none.
    Regularization,
    /// Level-0 sizes N/4, N/2 and N.
    CacheSize,
    /// Scale learning rate 0 versus 5e-3.
    ScaleLr,
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" | "beta-division" => Ok(Self::BetaDivision),
            "reg" | "regularization" => Ok(Self::Regularization),
            "size" | "cache-size" => Ok(Self::CacheSize),
            "scale-lr" | "covariance-lr" => Ok(Self::ScaleLr),
            o => Err(Error::Config(format!("unknown ablation `{o}`"))),
        }
    }
}

pub fn ablation_variants(base: &ExperimentConfig, which: Ablation) -> Vec<(String, ExperimentConfig)> {
    let mut out = Vec::new();
    let mut push = |name: String, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        c.mode = Mode::NeeCache;
        f(&mut c);
        c.output = base.output.join(&name);
        out.push((name, c));
    };
    match which {
        Ablation::BetaDivision => {
            push("beta_on".into(), &|c| c.policy.beta_division = true);
            push("beta_off".into(), &|c| c.policy.beta_division = false);
        }
        Ablation::Regularization => {
            push("reg".into(), &|c| c.trainer.weight_decay = 1e-2);
            push("no_reg".into(), &|c| c.trainer.weight_decay = 0.0);
        }
        Ablation::CacheSize => {
            for div in [4, 2, 1] {
                let n = (base.cache.n / div).max(base.cache.k + 1);
                push(format!("n_{n}"), &move |c| c.cache.n = n);
            }
        }
        Ablation::ScaleLr => {
            push("scale_lr_0".into(), &|c| c.trainer.lr.scaling = 0.0);
            push("scale_lr_5e-3".into(), &|c| c.trainer.lr.scaling = 5e-3);
        }
    }
    out
}

pub fn ablate(base: &ExperimentConfig, which: Ablation) -> Result<Vec<(String, Vec<MetricsRow>)>> {
    let mut out = Vec::new();
    let mut all = Vec::new();
    for (name, cfg) in ablation_variants(base, which) {
        let rows = run_experiment(&cfg)?;
        all.extend(rows.iter().cloned().map(|mut r| {
            r.mode = format!("{}:{name}", r.mode);
            r
        }));
        out.push((name, rows));
    }
    finish_sweep(base, &all)?;
    Ok(out)
}

fn finish_sweep(base: &ExperimentConfig, rows: &[MetricsRow]) -> Result<()> {
    std::fs::create_dir_all(&base.output).at(&base.output)?;
    write_metrics(&base.output.join("metrics.csv"), rows)?;
    let summary = summarize(rows, base.warmup);
    write_summary_csv(&base.output.join("summary.csv"), &summary)?;
    let report = base.output.join("report.txt");
    std::fs::write(&report, render_report(&summary)).at(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path, mode: Mode) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            resolution: Some([24, 16]),
            frames: 2,
            output: dir.to_path_buf(),
            cache: CacheConfig { n: 400, k: 2, ..CacheConfig::default() },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = ExperimentConfig { spp: 4, warmup: 3, ..ExperimentConfig::default() };
        assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        let parsed = ExperimentConfig::from_toml_str("mode = \"nee\"\nspp = 2\n").unwrap();
        assert_eq!(parsed.mode, Mode::Nee);
        assert!(ExperimentConfig::from_toml_str("frames = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn level_count_mismatch_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.policy.max_cache_length = 4;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn cache_experiment_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let rows = run_experiment(&tiny(dir.path(), Mode::NeeCache)).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.st_ms > 0.0 && r.psnr.is_none()));
        assert!(dir.path().join("frame_0001.pfm").exists());
        assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap(), rows);
    }

    #[test]
    fn reference_then_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let refdir = dir.path().join("ref");
        let mut rcfg = tiny(&refdir, Mode::Reference);
        rcfg.spp = 8;
        run_experiment(&rcfg).unwrap();
        assert!(refdir.join("reference_0001.pfm").exists());

        let mut cfg = tiny(&dir.path().join("nee"), Mode::Nee);
        cfg.reference = Some(refdir.clone());
        let rows = run_experiment(&cfg).unwrap();
        assert!(rows.iter().all(|r| r.psnr.unwrap() > 5.0));

        cfg.reference = Some(dir.path().join("missing"));
        assert!(matches!(run_experiment(&cfg), Err(Error::MissingReference(_))));
    }
}
