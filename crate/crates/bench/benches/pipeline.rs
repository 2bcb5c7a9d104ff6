use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use splatcache::cache::{initialize_cache, splat_all_levels, CacheConfig};
use splatcache::harness::{ExperimentConfig, Session};
use splatcache::pathtracer::{render_frame, CacheContext, RenderSettings};
use splatcache::policy::PolicyConfig;
use splatcache::trainer::{train_step, OptimizerState, TrainerConfig};

fn config() -> ExperimentConfig {
    ExperimentConfig { resolution: Some([64, 64]), cache: CacheConfig { n: 5000, k: 2, ..CacheConfig::default() }, ..ExperimentConfig::default() }
}

fn stages(c: &mut Criterion) {
    let session = Session::from_config(config()).unwrap();
    let scene = &session.scene;
    let camera = scene.camera;
    let cfg = CacheConfig { n: 5000, k: 2, ..CacheConfig::default() };
    let hierarchy = initialize_cache(&scene.medium, &cfg, 1).unwrap();
    let policy = PolicyConfig::default();
    let images = splat_all_levels(&hierarchy, &camera, camera.resolution, 0);
    let settings = RenderSettings { record_levels: 3, ..RenderSettings::default() };

    c.bench_function("splat_all_levels", |b| b.iter(|| splat_all_levels(&hierarchy, &camera, camera.resolution, 0)));
    c.bench_function("render_frame_nee", |b| b.iter(|| render_frame(scene, &RenderSettings::default(), None).unwrap()));
    c.bench_function("render_frame_cached", |b| {
        let ctx = CacheContext { policy: &policy, images: &images, frame: 0 };
        b.iter(|| render_frame(scene, &settings, Some(&ctx)).unwrap())
    });
    let ctx = CacheContext { policy: &policy, images: &images, frame: 0 };
    let paths = render_frame(scene, &settings, Some(&ctx)).unwrap().paths;
    c.bench_function("train_step", |b| {
        b.iter_batched(
            || (hierarchy.clone(), OptimizerState::for_hierarchy(&hierarchy)),
            |(mut h, mut opt)| train_step(&mut h, &paths, &camera, 0, 1, &mut opt, &TrainerConfig::default()).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn full_frame(c: &mut Criterion) {
    let mut session = Session::from_config(config()).unwrap();
    let mut frame = 0;
    c.bench_function("session_frame", |b| {
        b.iter(|| {
            frame += 1;
            session.render(frame).unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = stages, full_frame
}
criterion_main!(benches);
