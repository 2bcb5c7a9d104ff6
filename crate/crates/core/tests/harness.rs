use splatcache::cache::CacheConfig;
use splatcache::harness::{read_metrics, run_experiment, summarize, sweep_c, ExperimentConfig, MetricsRow, Mode};
use splatcache::scene::{CameraKey, CameraPath};

fn tiny(out: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        resolution: Some([20, 16]),
        frames: 3,
        output: out.to_path_buf(),
        cache: CacheConfig { n: 300, k: 2, ..CacheConfig::default() },
        ..ExperimentConfig::default()
    }
}

fn without_timings(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    rows.iter().map(|r| MetricsRow { pt_ms: 0.0, st_ms: 0.0, ot_ms: 0.0, ..r.clone() }).collect()
}

#[test]
fn identical_configs_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&tiny(&dir.path().join("a"))).unwrap();
    let b = run_experiment(&tiny(&dir.path().join("b"))).unwrap();
    assert_eq!(without_timings(&a), without_timings(&b));
    let mut other = tiny(&dir.path().join("c"));
    other.seed = 1;
    assert_ne!(without_timings(&a), without_timings(&run_experiment(&other).unwrap()));
}

#[test]
fn fly_through_emits_one_row_and_image_pair_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.frames = 4;
    cfg.camera_path = Some(CameraPath {
        keys: vec![
            CameraKey { frame: 0, position: [0.5, 0.5, -1.5], look_at: [0.5, 0.5, 0.5] },
            CameraKey { frame: 3, position: [1.5, 0.8, -1.0], look_at: [0.5, 0.5, 0.5] },
        ],
    });
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 4);
    for f in 0..4 {
        assert!(dir.path().join(format!("frame_{f:04}.pfm")).exists());
        assert!(dir.path().join(format!("frame_{f:04}.png")).exists());
    }
    assert_eq!(read_metrics(&dir.path().join("metrics.csv")).unwrap().len(), 4);
    for r in &rows {
        assert!(r.mean_luminance.is_finite() && r.pt_ms >= 0.0 && r.st_ms >= 0.0 && r.ot_ms >= 0.0);
    }
}

#[test]
fn c_sweep_yields_one_summary_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.frames = 2;
    cfg.write_images = false;
    let rows = sweep_c(&cfg, &[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
    assert_eq!(summarize(&rows, 0).len(), 5);
    assert!(dir.path().join("report.txt").exists());
    assert!(dir.path().join("c_0.25/metrics.csv").exists());
}

#[test]
fn uniform_mode_has_no_cache_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.mode = Mode::Uniform;
    let rows = run_experiment(&cfg).unwrap();
    assert!(rows.iter().all(|r| r.st_ms == 0.0 && r.ot_ms == 0.0 && r.loss.is_none()));
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk.toml", "flythrough.toml"] {
        let cfg = ExperimentConfig::load(&dir.join(name)).unwrap();
        assert!(cfg.output.is_absolute() || cfg.output.starts_with(&dir));
        cfg.scene_config().unwrap();
    }
}
