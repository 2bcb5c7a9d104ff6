use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Camera, Scene, SphereLight};
use crate::error::{IoContext, Result};
use crate::math::{Rgb, Vec3};
use crate::volume::{load_volume_with_sidecar, ControlPoint, Medium, Procedural, TransferFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VolumeSource {
    /// Path to the metadata sidecar; the raw file shares its stem.
    Raw { sidecar: PathBuf },
    Procedural(Procedural),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransferSource {
    File { path: PathBuf },
    Inline { point: Vec<ControlPoint> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub vertical_fov_deg: f64,
    pub resolution: [usize; 2],
}

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

/// One keyframed pose of a fly-through.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraKey {
    pub frame: u64,
    pub position: [f64; 3],
    pub look_at: [f64; 3],
}

/// Piecewise-linear camera script; frames outside the keyed range hold the end poses.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub keys: Vec<CameraKey>,
}

impl CameraPath {
    pub fn camera_at(&self, base: &Camera, frame: u64) -> Camera {
        let keys = &self.keys;
        if keys.is_empty() {
            return *base;
        }
        let pose = |k: &CameraKey| (Vec3::from_array(k.position), Vec3::from_array(k.look_at));
        let (pos, look) = if frame <= keys[0].frame {
            pose(&keys[0])
        } else if frame >= keys[keys.len() - 1].frame {
            pose(&keys[keys.len() - 1])
        } else {
            let i = keys.partition_point(|k| k.frame <= frame);
            let (a, b) = (&keys[i - 1], &keys[i]);
            let t = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
            let (pa, la) = pose(a);
            let (pb, lb) = pose(b);
            (pa * (1.0 - t) + pb * t, la * (1.0 - t) + lb * t)
        };
        Camera { position: pos, look_at: look, ..*base }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub camera: CameraConfig,
    #[serde(default, rename = "light")]
    pub lights: Vec<SphereLight>,
    #[serde(default)]
    pub background: [f64; 3],
    pub volume: VolumeSource,
    pub transfer: TransferSource,
    #[serde(default)]
    pub camera_path: CameraPath,
}

impl SceneConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    /// Load and resolve relative file references against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path).at(path)?)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if let VolumeSource::Raw { sidecar } = &mut cfg.volume {
            if sidecar.is_relative() {
                *sidecar = dir.join(&*sidecar);
            }
        }
        if let TransferSource::File { path } = &mut cfg.transfer {
            if path.is_relative() {
                *path = dir.join(&*path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scene config serializes")
    }

    pub fn base_camera(&self) -> Result<Camera> {
        let c = &self.camera;
        Camera::new(
            Vec3::from_array(c.position),
            Vec3::from_array(c.look_at),
            Vec3::from_array(c.up),
            c.vertical_fov_deg.to_radians(),
            (c.resolution[0], c.resolution[1]),
        )
    }

    pub fn build_medium(&self) -> Result<Medium> {
        let field = match &self.volume {
            VolumeSource::Raw { sidecar } => load_volume_with_sidecar(sidecar)?,
            VolumeSource::Procedural(p) => p.build()?,
        };
        let tf = match &self.transfer {
            TransferSource::File { path } => TransferFunction::load(path)?,
            TransferSource::Inline { point } => TransferFunction::new(point.clone())?,
        };
        Ok(Medium::new(Arc::new(field), tf))
    }

    pub fn build(&self) -> Result<Scene> {
        Scene::new(
            self.base_camera()?,
            self.lights.clone(),
            Rgb::from_array(self.background),
            Arc::new(self.build_medium()?),
        )
    }
}
