use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::math::Rgb;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub scalar: f64,
    pub albedo: [f64; 3],
    pub extinction: f64,
}

/// Piecewise-linear map from normalized scalar to (extinction, albedo).
///
/// Scalars below the first or above the last control point take the end values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferFunction {
    control_points: Vec<ControlPoint>,
    max_extinction: f64,
}

#[derive(Deserialize)]
struct TransferFile {
    #[serde(rename = "point")]
    points: Vec<ControlPoint>,
}

impl TransferFunction {
    pub fn new(control_points: Vec<ControlPoint>) -> Result<Self> {
        if control_points.is_empty() {
            return Err(Error::InvalidTransferFunction("no control points".into()));
        }
        for w in control_points.windows(2) {
            if w[1].scalar <= w[0].scalar {
                return Err(Error::InvalidTransferFunction(format!(
                    "control points must be strictly increasing in scalar ({} after {})",
                    w[1].scalar, w[0].scalar
                )));
            }
        }
        for p in &control_points {
            if !(0.0..=1.0).contains(&p.scalar) {
                return Err(Error::InvalidTransferFunction(format!("scalar {} outside [0,1]", p.scalar)));
            }
            if !(p.extinction >= 0.0 && p.extinction.is_finite()) {
                return Err(Error::InvalidTransferFunction(format!("extinction {} invalid", p.extinction)));
            }
            if p.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::InvalidTransferFunction(format!("albedo {:?} outside [0,1]", p.albedo)));
            }
        }
        // Linear interpolation attains its maximum at a control point.
        let max_extinction = control_points.iter().map(|p| p.extinction).fold(0.0, f64::max);
        Ok(Self { control_points, max_extinction })
    }

    /// Linear extinction ramp `0 -> max` with constant albedo.
    pub fn ramp(max_extinction: f64, albedo: Rgb) -> Self {
        Self::new(vec![
            ControlPoint { scalar: 0.0, albedo: albedo.to_array(), extinction: 0.0 },
            ControlPoint { scalar: 1.0, albedo: albedo.to_array(), extinction: max_extinction },
        ])
        .expect("ramp transfer function is valid")
    }

    /// Same extinction and albedo for every scalar.
    pub fn constant(extinction: f64, albedo: Rgb) -> Self {
        Self::new(vec![ControlPoint { scalar: 0.0, albedo: albedo.to_array(), extinction }])
            .expect("constant transfer function is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: TransferFile = toml::from_str(s)?;
        Self::new(f.points)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn control_points(&self) -> &[ControlPoint] {
        &self.control_points
    }

    pub fn max_extinction(&self) -> f64 {
        self.max_extinction
    }

    pub fn lookup(&self, s: f64) -> (f64, Rgb) {
        let cps = &self.control_points;
        let first = &cps[0];
        let last = &cps[cps.len() - 1];
        if s <= first.scalar {
            return (first.extinction, Rgb::from_array(first.albedo));
        }
        if s >= last.scalar {
            return (last.extinction, Rgb::from_array(last.albedo));
        }
        let i = cps.partition_point(|p| p.scalar <= s);
        let (a, b) = (&cps[i - 1], &cps[i]);
        let t = (s - a.scalar) / (b.scalar - a.scalar);
        let ext = a.extinction + t * (b.extinction - a.extinction);
        let alb = Rgb::from_array(a.albedo) * (1.0 - t) + Rgb::from_array(b.albedo) * t;
        (ext, alb)
    }
}
