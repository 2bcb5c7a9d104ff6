use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use splatcache::cache::initialize_cache;
use splatcache::harness::{
    ablate, psnr, read_metrics, read_pfm, render_report, rmse, run_experiment, summarize, sweep_c, sweep_spp,
    write_summary_csv, Ablation, ExperimentConfig, MetricsRow, Mode,
};
use splatcache::policy::BetaConvention;

#[derive(Parser)]
#[command(name = "splatcache", version, about = "Volumetric path tracing with a trained Gaussian-splat radiance cache")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the cache hierarchy for a scene and write a snapshot.
    InitCache {
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment: splat, render and train every frame.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Render the converged reference sequence (NEE, no cache).
    Reference {
        #[command(flatten)]
        common: Common,
    },
    /// One cached run per sampling coefficient.
    SweepC {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        values: Vec<f64>,
    },
    /// One run per samples-per-pixel value.
    SweepSpp {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,4,16")]
        values: Vec<usize>,
    },
    /// Paired runs toggling one design choice: beta, reg, size or scale-lr.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kind: Ablation,
    },
    /// Compare one image against a reference.
    Metrics {
        image: PathBuf,
        reference: PathBuf,
    },
    /// Aggregate metrics CSVs into text and CSV reports.
    Summarize {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        warmup: u64,
        /// Directory for summary.csv and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Overrides applied on top of the experiment config file.
#[derive(Args)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    frames: Option<u64>,
    #[arg(long)]
    spp: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    resolution: Option<Vec<usize>>,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Sampling coefficient C.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    beta_convention: Option<BetaConvention>,
    #[arg(long)]
    beta_division: Option<bool>,
    /// Level-0 cache size N.
    #[arg(long)]
    cache_size: Option<usize>,
    #[arg(long)]
    cache_snapshot: Option<PathBuf>,
    #[arg(long)]
    no_images: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set!(output => cfg.output, frames => cfg.frames, spp => cfg.spp, seed => cfg.seed, warmup => cfg.warmup,
             c => cfg.policy.c, beta_convention => cfg.policy.beta_convention,
             beta_division => cfg.policy.beta_division, cache_size => cfg.cache.n);
        if self.scene.is_some() {
            cfg.scene = self.scene.clone();
        }
        if self.reference.is_some() {
            cfg.reference = self.reference.clone();
        }
        if self.cache_snapshot.is_some() {
            cfg.cache_snapshot = self.cache_snapshot.clone();
        }
        if let Some(r) = &self.resolution {
            cfg.resolution = Some([r[0], r[1]]);
        }
        if self.no_images {
            cfg.write_images = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_rows(rows: &[MetricsRow], warmup: u64) {
    print!("{}", render_report(&summarize(rows, warmup)));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitCache { common } => {
            let cfg = common.load()?;
            let scene = cfg.scene_config()?.build()?;
            let h = initialize_cache(&scene.medium, &cfg.cache, cfg.seed)?;
            h.snapshot(&cfg.output)?;
            for (i, l) in h.levels.iter().enumerate() {
                println!("level {i}: {} splats", l.len());
            }
            println!(
                "{} splats, {:.2} MB, {:.1} ms -> {}",
                h.total_splats(),
                h.footprint_bytes() as f64 / 1e6,
                h.init_ms,
                cfg.output.display()
            );
        }
        Command::Render { common, mode } => {
            let mut cfg = common.load()?;
            if let Some(m) = mode {
                cfg.mode = m;
                cfg.validate()?;
            }
            let rows = run_experiment(&cfg)?;
            print_rows(&rows, cfg.warmup);
        }
        Command::Reference { common } => {
            let mut cfg = common.load()?;
            cfg.mode = Mode::Reference;
            if common.spp.is_none() && cfg.spp < 4096 {
                cfg.spp = 4096;
            }
            let rows = run_experiment(&cfg)?;
            println!("wrote {} reference frames to {}", rows.len(), cfg.output.display());
        }
        Command::SweepC { common, values } => {
            let cfg = common.load()?;
            let rows = sweep_c(&cfg, &values)?;
            print_rows(&rows, cfg.warmup);
        }
        Command::SweepSpp { common, values } => {
            let cfg = common.load()?;
            let rows = sweep_spp(&cfg, &values)?;
            print_rows(&rows, cfg.warmup);
        }
        Command::Ablate { common, kind } => {
            let cfg = common.load()?;
            let runs = ablate(&cfg, kind)?;
            for (name, rows) in &runs {
                println!("== {name}");
                print_rows(rows, cfg.warmup);
            }
        }
        Command::Metrics { image, reference } => {
            let a = read_pfm(&image)?;
            let b = read_pfm(&reference)?;
            println!("psnr_db {:.4}", psnr(&a, &b)?);
            println!("rmse {:.6}", rmse(&a, &b)?);
            println!("mean_luminance {:.6} (reference {:.6})", a.mean_luminance(), b.mean_luminance());
        }
        Command::Summarize { csv, warmup, out } => {
            let mut rows = Vec::new();
            for p in &csv {
                rows.extend(read_metrics(p).with_context(|| format!("reading {}", p.display()))?);
            }
            if rows.is_empty() {
                bail!("no metric rows in the given files");
            }
            let summary = summarize(&rows, warmup);
            let report = render_report(&summary);
            print!("{report}");
            if let Some(dir) = out {
                write_outputs(&dir, &summary, &report)?;
            }
        }
    }
    Ok(())
}

fn write_outputs(dir: &Path, summary: &[splatcache::harness::SummaryRow], report: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_summary_csv(&dir.join("summary.csv"), summary)?;
    std::fs::write(dir.join("report.txt"), report)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
