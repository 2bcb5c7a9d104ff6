mod common;

use common::*;
use splatcache::cache::LevelImageSet;
use splatcache::gsplat::SplatImage;
use splatcache::math::Rgb;
use splatcache::pathtracer::{render_frame, trace_nee, trace_uniform, CacheContext, Integrator, RenderSettings, MAX_DEPTH};
use splatcache::policy::PolicyConfig;
use splatcache::rng::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn samples(n: u64, f: impl Fn(&mut Rng) -> f64) -> Vec<f64> {
    (0..n).map(|i| f(&mut Rng::for_sample(11, 0, 0, i))).collect()
}

#[test]
fn absorbing_slab_follows_beer_lambert() {
    for sigma in [0.5, 1.0, 2.0] {
        let scene = slab_scene(sigma, 0.0, 1.0, vec![]);
        let expected = (-sigma).exp();
        let sd = (expected * (1.0 - expected) / 1e5).sqrt();
        let u = samples(100_000, |r| trace_uniform(&scene, (0, 0), r, MAX_DEPTH).rgb.x);
        let n = samples(100_000, |r| trace_nee(&scene, (0, 0), r, None, None, MAX_DEPTH).unwrap().0.rgb.x);
        for (name, xs) in [("uniform", u), ("nee", n)] {
            let (m, _) = mean_and_se(&xs);
            assert!((m - expected).abs() < 3.0 * sd, "{name} sigma={sigma}: {m} vs {expected}");
        }
    }
}

#[test]
fn uniform_and_nee_agree_in_expectation() {
    let scene = slab_scene(2.0, 0.8, 0.2, vec![side_light()]);
    let u = samples(200_000, |r| trace_uniform(&scene, (0, 0), r, MAX_DEPTH).rgb.x);
    let n = samples(100_000, |r| trace_nee(&scene, (0, 0), r, None, None, MAX_DEPTH).unwrap().0.rgb.x);
    let (mu, su) = mean_and_se(&u);
    let (mn, sn) = mean_and_se(&n);
    assert!((mu - mn).abs() < 3.0 * (su * su + sn * sn).sqrt(), "uniform {mu}±{su} vs nee {mn}±{sn}");
}

#[test]
fn nee_reduces_single_scatter_variance() {
    let scene = slab_scene(1.0, 1.0, 0.0, vec![side_light()]);
    let u = samples(10_000, |r| trace_uniform(&scene, (0, 0), r, 1).rgb.x);
    let n = samples(10_000, |r| trace_nee(&scene, (0, 0), r, None, None, 1).unwrap().0.rgb.x);
    let var = |xs: &[f64]| mean_and_se(xs).1.powi(2) * xs.len() as f64;
    assert!(var(&n) < var(&u), "nee variance {} vs uniform {}", var(&n), var(&u));
}

#[test]
fn zero_depth_cap_keeps_only_unscattered_light() {
    let scene = slab_scene(1.5, 1.0, 1.0, vec![side_light()]);
    let expected = (-1.5f64).exp();
    let xs = samples(50_000, |r| trace_nee(&scene, (0, 0), r, None, None, 0).unwrap().0.rgb.x);
    let (m, _) = mean_and_se(&xs);
    let sd = (expected * (1.0 - expected) / 5e4).sqrt();
    assert!((m - expected).abs() < 3.0 * sd, "{m} vs {expected}");
}

#[test]
fn phase_directions_are_uniform_on_the_sphere() {
    let n = 200_000;
    let bins = 16;
    let mut hist = vec![0u32; bins * bins];
    let mut rng = Rng::new(5);
    for _ in 0..n {
        let d = rng.next_unit_vector();
        assert!((d.length() - 1.0).abs() < 1e-12);
        let a = (((d.z + 1.0) / 2.0) * bins as f64).min(bins as f64 - 1.0) as usize;
        let phi = d.y.atan2(d.x) + std::f64::consts::PI;
        let b = ((phi / std::f64::consts::TAU) * bins as f64).min(bins as f64 - 1.0) as usize;
        hist[a * bins + b] += 1;
    }
    let e = n as f64 / (bins * bins) as f64;
    let chi2: f64 = hist.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    let crit = ChiSquared::new((bins * bins - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
}

fn cached_mean_depth(c: f64) -> f64 {
    let scene = slab_scene(3.0, 0.8, 0.1, vec![side_light()]).with_camera({
        let mut cam = pencil_camera();
        cam.resolution = (4, 4);
        cam
    });
    let policy = PolicyConfig { c, ..PolicyConfig::default() };
    let images = LevelImageSet { frame: 0, images: vec![SplatImage::filled(4, 4, Rgb::splat(0.1)); 3], splat_ms: vec![0.0; 3] };
    let ctx = CacheContext { policy: &policy, images: &images, frame: 0 };
    let settings = RenderSettings { spp: 2000, ..RenderSettings::default() };
    render_frame(&scene, &settings, Some(&ctx)).unwrap().stats.mean_depth()
}

#[test]
fn mean_depth_grows_with_sampling_coefficient() {
    let depths: Vec<f64> = [0.0, 0.25, 0.5, 1.0, 4.0].into_iter().map(cached_mean_depth).collect();
    for w in depths.windows(2) {
        assert!(w[0] <= w[1], "{depths:?}");
    }
    assert!(depths[0] <= 1.0);
}

#[test]
fn frames_are_deterministic_and_integrators_differ() {
    let mut scene = slab_scene(2.0, 0.8, 0.2, vec![side_light()]);
    scene.camera.resolution = (20, 18);
    let s = RenderSettings { spp: 3, seed: 9, frame: 4, ..RenderSettings::default() };
    let a = render_frame(&scene, &s, None).unwrap();
    let b = render_frame(&scene, &s, None).unwrap();
    assert_eq!(a.buffer, b.buffer);
    let u = render_frame(&scene, &RenderSettings { integrator: Integrator::Uniform, ..s }, None).unwrap();
    assert_ne!(a.buffer, u.buffer);
    assert_eq!(a.stats.paths, 20 * 18 * 3);
}
