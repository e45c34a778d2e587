use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use d3_core::harness::{self, RunConfig, RunReport};
use d3_core::metrics::{evaluate_subsets, RealPool};
use d3_core::robustness;
use d3_core::synth::{self, CorpusParams};
use d3_core::D3Error;

const CONFIG_ERROR: u8 = 1;
const PARTIAL_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(name = "d3", version, about = "Score videos by the volatility of second-order embedding differences")]
struct Cli {
    /// Log progress and per-stage timings.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every video of a manifest and write scores.csv and report.json.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-video F0-norm/F1/F2 series.
        #[arg(long)]
        series: bool,
    },
    /// Recompute metrics from a scores.csv.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// Only real videos with this subset tag are negatives.
        #[arg(long)]
        real_pool: Option<String>,
    },
    /// Evaluate under a grid of blur and JPEG perturbations.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = robustness::BLUR_SIGMAS)]
        blur_sigmas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = robustness::JPEG_QUALITIES)]
        jpeg_qualities: Vec<u8>,
        /// Output CSV.
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Generate a synthetic corpus of real-like clips and smooth clones.
    Synth {
        #[arg(long, default_value_t = 100)]
        n_real: usize,
        #[arg(long, default_value_t = 100)]
        n_fake: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the F0-norm/F1/F2 series of one video as CSV.
    Series {
        #[arg(long)]
        video: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "series.csv")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    max_seconds: Option<f64>,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long, env = "D3_WORKERS")]
    workers: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, D3Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let s = &mut cfg.sampling;
        if let Some(fps) = self.fps {
            s.target_fps = fps;
        }
        if let Some(secs) = self.max_seconds {
            s.max_duration_s = secs;
        }
        if self.fps.is_some() || self.max_seconds.is_some() {
            s.max_frames = (s.target_fps * s.max_duration_s).floor() as usize;
        }
        if let Some(n) = self.max_frames {
            s.max_frames = n;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Distinguishes bad input (exit 1) from runs that finished with failed
/// videos (exit 2).
enum Failure {
    Config(anyhow::Error),
    Partial(String),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Config(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(CONFIG_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(CONFIG_ERROR)
        }
        Err(Failure::Partial(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(PARTIAL_FAILURE)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Score {
            manifest,
            run,
            out,
            series,
        } => score(&manifest, &run.load()?, &out, series),
        Command::Eval { scores, real_pool } => {
            let records = harness::read_scores_csv(&scores).with_context(|| scores.display().to_string())?;
            let report = evaluate_subsets(&records, &RealPool::from_tag(real_pool.as_deref()))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Sweep {
            manifest,
            run,
            blur_sigmas,
            jpeg_qualities,
            out,
        } => {
            let cfg = run.load()?;
            let entries = harness::load_manifest(&manifest)?;
            let grid = robustness::grid(&blur_sigmas, &jpeg_qualities);
            let result = robustness::sweep(&entries, &cfg, &grid, &cfg.pool())?;
            robustness::write_sweep_csv(&result, &out)?;
            for (p, delta) in result.degradation() {
                match delta {
                    Some(d) => println!("{p}\tdelta_mAP {d:+.4}"),
                    None => println!("{p}\tundefined"),
                }
            }
            let broken: Vec<String> = std::iter::once(&result.baseline)
                .chain(&result.points)
                .filter(|p| p.failed > 0 || p.error.is_some())
                .map(|p| p.perturbation.to_string())
                .collect();
            if broken.is_empty() {
                Ok(())
            } else {
                Err(Failure::Partial(format!("failures at grid points: {}", broken.join(", "))))
            }
        }
        Command::Synth { n_real, n_fake, seed, out } => {
            let manifest = synth::make_corpus(n_real, n_fake, &CorpusParams::with_seed(seed), &out)?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::Series { video, run, out } => {
            let series = harness::video_series(&video, &run.load()?)?;
            harness::write_series_csv(&[series], &out)?;
            println!("{}", out.display());
            Ok(())
        }
    }
}

fn score(manifest: &Path, cfg: &RunConfig, out: &Path, series: bool) -> Result<(), Failure> {
    let entries = harness::load_manifest(manifest)?;
    let run = match harness::run_detection(&entries, cfg) {
        Err(e @ D3Error::EntryFailed { .. }) => return Err(Failure::Partial(e.to_string())),
        other => other?,
    };
    let evaluated = harness::evaluate(&run, cfg);
    let summary = RunReport::new(cfg, &run, evaluated.as_ref().map_err(|e| e.to_string()))?;
    harness::emit_report(&summary, out, series)?;
    match &evaluated {
        Ok(r) => {
            for (subset, m) in &r.per_subset {
                println!("{subset}\tAP {:.4}\tAUROC {:.4}\t(+{} / -{})", m.ap, m.auroc, m.n_pos, m.n_neg);
            }
            println!("mAP {:.4}\tmean AUROC {:.4}", r.map, r.mean_auroc);
        }
        Err(e) => log::warn!("no metrics: {e}"),
    }
    if run.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Partial(format!(
            "{} of {} videos failed; see {}",
            run.failures.len(),
            entries.len(),
            out.join(harness::REPORT_FILE).display()
        )))
    }
}
