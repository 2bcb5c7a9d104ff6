//! Volumetric path tracing with an online-trained, multi-level radiance cache
//! stored as 3D Gaussian splats.
pub mod cache;
pub mod error;
pub mod gsplat;
pub mod harness;
pub mod math;
pub mod pathtracer;
pub mod policy;
pub mod rng;
pub mod scene;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
