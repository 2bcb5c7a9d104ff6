//! Cache-use decisions along a path: the early-termination lottery,
//! throughput boosting, cascaded survival tracking and cache reads.

pub mod toy;

use serde::{Deserialize, Serialize};

use crate::cache::LevelImageSet;
use crate::error::{Error, Result};
use crate::math::Rgb;
use crate::rng::Rng;

/// Rec. 709 luminance.
pub fn luminance(c: Rgb) -> f64 {
    0.2126 * c.x + 0.7152 * c.y + 0.0722 * c.z
}

/// How training samples are attenuated before they enter the path buffers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaConvention {
    /// Attenuate by the boosted throughput `Tr_out` (raw product divided by survival odds).
    StoreBoosted,
    /// Attenuate by the raw albedo product.
    #[default]
    StoreRaw,
}

impl std::str::FromStr for BetaConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "store_boosted" | "boosted" => Ok(Self::StoreBoosted),
            "store_raw" | "raw" => Ok(Self::StoreRaw),
            o => Err(Error::Config(format!("unknown beta convention `{o}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Sampling coefficient `C`.
    pub c: f64,
    pub activation_threshold: f64,
    pub epsilon: f64,
    /// Number of cache levels (`K + 1`).
    pub max_cache_length: usize,
    pub beta_convention: BetaConvention,
    /// Divide cache reads by the cascade product of prior survival probabilities.
    pub beta_division: bool,
    /// Replace zero-radiance natural exits with the cache value at the exit depth.
    pub natural_substitution: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            c: 0.5,
            activation_threshold: 0.9,
            epsilon: 1e-5,
            max_cache_length: 3,
            beta_convention: BetaConvention::default(),
            beta_division: false,
            natural_substitution: false,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0) {
            return Err(Error::Config(format!("C = {} must be >= 0", self.c)));
        }
        if !(self.activation_threshold > 0.0 && self.activation_threshold <= 1.0) {
            return Err(Error::Config("activation threshold must lie in (0, 1]".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.max_cache_length == 0 {
            return Err(Error::Config("need at least one cache level".into()));
        }
        Ok(())
    }

    /// Cache level for a path that stops at `depth >= 1`; deeper paths clamp to the last level.
    pub fn level_for_depth(&self, depth: usize) -> usize {
        depth.clamp(1, self.max_cache_length) - 1
    }
}

/// Running state of one path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathState {
    /// Number of real collisions so far.
    pub depth: usize,
    /// Product of vertex albedos.
    pub throughput_raw: Rgb,
    /// Product of albedos divided by survived lottery probabilities.
    pub throughput_boosted: Rgb,
    /// Product of survived lottery probabilities.
    pub beta: f64,
    pub pixel: (usize, usize),
}

impl PathState {
    pub fn new(pixel: (usize, usize)) -> Self {
        Self { depth: 0, throughput_raw: Rgb::ONE, throughput_boosted: Rgb::ONE, beta: 1.0, pixel }
    }

    /// Register a real collision with the given albedo.
    pub fn scatter(&mut self, albedo: Rgb) {
        self.depth += 1;
        self.throughput_raw = self.throughput_raw.mul_elem(albedo);
        self.throughput_boosted = self.throughput_boosted.mul_elem(albedo);
    }

    pub fn apply(&mut self, d: &TerminationDecision) {
        self.throughput_boosted = d.tr_out;
        self.beta = d.beta;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TerminationDecision {
    pub terminate: bool,
    pub tr_out: Rgb,
    pub beta: f64,
    /// Survival probability `Tr` (1 when the heuristic is inactive).
    pub tr: f64,
    pub q: f64,
    pub p: f64,
}

/// One lottery with a caller-supplied uniform `q`.
pub fn termination_step_with(state: &PathState, config: &PolicyConfig, q: f64) -> TerminationDecision {
    let tr = (config.c * luminance(state.throughput_boosted)).clamp(0.0, 1.0);
    let inactive = TerminationDecision {
        terminate: false,
        tr_out: state.throughput_boosted,
        beta: state.beta,
        tr: 1.0,
        q,
        p: 0.0,
    };
    if tr >= config.activation_threshold {
        return inactive;
    }
    let p = 1.0 - tr;
    if q < p {
        return TerminationDecision { terminate: true, tr, p, ..inactive };
    }
    TerminationDecision {
        terminate: false,
        tr_out: state.throughput_boosted / (tr + config.epsilon),
        beta: state.beta * tr,
        tr,
        q,
        p,
    }
}

/// One lottery. Consumes a uniform draw only when the heuristic is active.
pub fn termination_step(state: &PathState, config: &PolicyConfig, rng: &mut Rng) -> TerminationDecision {
    let tr = (config.c * luminance(state.throughput_boosted)).clamp(0.0, 1.0);
    if tr >= config.activation_threshold {
        return termination_step_with(state, config, 1.0);
    }
    termination_step_with(state, config, rng.next_f64())
}

/// Cached radiance at `pixel` for a path stopping at `terminal_depth`.
///
/// The level image is already attenuated; the cascade product only rescales it.
pub fn cache_read(
    images: &LevelImageSet,
    expected_frame: u64,
    pixel: (usize, usize),
    terminal_depth: usize,
    beta_prev: f64,
    config: &PolicyConfig,
) -> Result<Rgb> {
    if images.frame != expected_frame {
        return Err(Error::StaleFrame { expected: expected_frame, found: images.frame });
    }
    let level = config.level_for_depth(terminal_depth).min(images.images.len() - 1);
    let v = images.images[level].rgb_at(pixel.0, pixel.1);
    Ok(if config.beta_division { v / beta_prev } else { v })
}

/// Keep a nonzero exit sample, otherwise fall back to the cache at the exit depth.
pub fn natural_termination_substitute(
    gathered: Rgb,
    images: &LevelImageSet,
    expected_frame: u64,
    pixel: (usize, usize),
    depth: usize,
    beta_prev: f64,
    config: &PolicyConfig,
) -> Result<Rgb> {
    if luminance(gathered) > 0.0 {
        return Ok(gathered);
    }
    cache_read(images, expected_frame, pixel, depth, beta_prev, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsplat::SplatImage;
    use proptest::prelude::*;

    fn state(albedo: f64) -> PathState {
        let mut s = PathState::new((0, 0));
        s.scatter(Rgb::splat(albedo));
        s
    }

    fn cfg(c: f64) -> PolicyConfig {
        PolicyConfig { c, ..PolicyConfig::default() }
    }

    #[test]
    fn luminance_weights() {
        assert_eq!(luminance(Rgb::ONE), 1.0);
        assert_eq!(luminance(Rgb::ZERO), 0.0);
        assert_eq!(luminance(Rgb::new(1.0, 0.0, 0.0)), 0.2126);
    }

    #[test]
    fn white_vertex_never_terminates() {
        let s = state(1.0);
        for q in [0.0, 0.3, 0.999] {
            let d = termination_step_with(&s, &cfg(1.0), q);
            assert!(!d.terminate);
            assert_eq!((d.tr_out, d.beta), (s.throughput_boosted, s.beta));
        }
    }

    #[test]
    fn grey_vertex_terminates_on_low_draw() {
        let d = termination_step_with(&state(0.5), &cfg(0.5), 0.5);
        assert!(d.terminate);
        assert!((d.tr - 0.25).abs() < 1e-15 && (d.p - 0.75).abs() < 1e-15);
    }

    #[test]
    fn grey_vertex_survives_and_boosts() {
        let d = termination_step_with(&state(0.5), &cfg(0.5), 0.9);
        assert!(!d.terminate);
        let expect = 0.5 / (0.25 + 1e-5);
        assert!((d.tr_out.x - expect).abs() < 1e-12 && (expect - 1.99992).abs() < 1e-5);
        assert_eq!(d.beta, 0.25);
    }

    #[test]
    fn zero_coefficient_always_terminates() {
        let mut rng = crate::rng::Rng::new(4);
        for a in [0.1, 0.5, 1.0] {
            for _ in 0..100 {
                assert!(termination_step(&state(a), &cfg(0.0), &mut rng).terminate);
            }
        }
    }

    fn images(frame: u64, values: &[f64]) -> LevelImageSet {
        LevelImageSet {
            frame,
            images: values.iter().map(|&v| SplatImage::filled(2, 2, Rgb::splat(v))).collect(),
            splat_ms: vec![0.0; values.len()],
        }
    }

    #[test]
    fn cache_read_scaling_and_clamp() {
        let imgs = images(3, &[1.0, 2.0, 4.0]);
        let mut c = cfg(0.5);
        c.beta_division = true;
        assert_eq!(cache_read(&imgs, 3, (1, 1), 1, 1.0, &c).unwrap(), Rgb::splat(1.0));
        assert_eq!(cache_read(&imgs, 3, (1, 1), 2, 0.25, &c).unwrap(), Rgb::splat(8.0));
        assert_eq!(cache_read(&imgs, 3, (0, 1), 9, 1.0, &c).unwrap(), Rgb::splat(4.0));
        assert!(matches!(cache_read(&imgs, 4, (0, 0), 1, 1.0, &c), Err(Error::StaleFrame { .. })));
        c.beta_division = false;
        assert_eq!(cache_read(&imgs, 3, (1, 1), 2, 0.25, &c).unwrap(), Rgb::splat(2.0));
    }

    #[test]
    fn natural_substitution_rules() {
        let imgs = images(0, &[1.0, 2.0, 4.0]);
        let c = cfg(0.5);
        let hit = Rgb::new(0.0, 0.3, 0.0);
        assert_eq!(natural_termination_substitute(hit, &imgs, 0, (0, 0), 2, 1.0, &c).unwrap(), hit);
        assert_eq!(natural_termination_substitute(Rgb::ZERO, &imgs, 0, (0, 0), 2, 1.0, &c).unwrap(), Rgb::splat(2.0));
        assert_eq!(natural_termination_substitute(Rgb::ZERO, &imgs, 0, (0, 0), 7, 1.0, &c).unwrap(), Rgb::splat(4.0));
    }

    proptest! {
        #[test]
        fn inactive_heuristic_is_identity(a in 0.0f64..1.0, q in 0.0f64..1.0) {
            let s = state(a.max(1e-3));
            let c = cfg(1.0 / luminance(s.throughput_boosted));
            let d = termination_step_with(&s, &c, q);
            prop_assert!(!d.terminate);
            prop_assert_eq!(d.tr_out, s.throughput_boosted);
            prop_assert_eq!(d.beta, s.beta);
        }

        #[test]
        fn beta_monotone_and_boost_identity(
            albedos in proptest::collection::vec(0.05f64..1.0, 1..8),
            qs in proptest::collection::vec(0.0f64..1.0, 8),
            c in 0.1f64..2.0,
        ) {
            for eps in [0.0, 1e-5] {
                let config = PolicyConfig { c, epsilon: eps, ..PolicyConfig::default() };
                let mut s = PathState::new((0, 0));
                let mut tr_min: f64 = 1.0;
                let mut lotteries = 0;
                for (a, q) in albedos.iter().zip(&qs) {
                    s.scatter(Rgb::splat(*a));
                    let before = s.beta;
                    let d = termination_step_with(&s, &config, *q);
                    if d.terminate { break; }
                    prop_assert!(d.beta <= before);
                    if d.tr < config.activation_threshold {
                        prop_assert!(d.beta < before || d.tr == 1.0);
                        tr_min = tr_min.min(d.tr);
                        lotteries += 1;
                    } else {
                        prop_assert_eq!(d.beta, before);
                    }
                    s.apply(&d);
                    let recon = s.throughput_boosted.x * s.beta;
                    let rel = (recon - s.throughput_raw.x).abs() / s.throughput_raw.x;
                    if eps == 0.0 {
                        prop_assert!(rel < 1e-12, "rel {}", rel);
                    } else {
                        prop_assert!(rel <= lotteries as f64 * eps / tr_min + 1e-12, "rel {}", rel);
                    }
                }
            }
        }
    }
}
