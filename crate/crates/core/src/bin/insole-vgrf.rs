use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use insole_vgrf::cli::{self, exit, Outcome};
use insole_vgrf::config::{RunConfig, OUT_ENV};
use insole_vgrf::Error;

/// vGRF estimation from smart-insole pressure switches and IMU data.
///
/// Stages read and write plain files under the output root (--out, then
/// `out` in the config file, then $INSOLE_VGRF_OUT, then ./insole-vgrf-out):
/// trials/, windows/, models/, eval/, report/.
///
/// Exit codes: 0 success, 1 findings or data errors, 2 usage or
/// configuration error, 3 I/O error or refusal to overwrite output.
#[derive(Debug, Parser)]
#[command(name = "insole-vgrf", version, after_help = format!("Environment:\n  {OUT_ENV}  default output root"))]
struct Args {
    /// TOML run configuration; unknown keys are rejected
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// seed for simulation, splits and training (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output root
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// overwrite a non-empty stage directory
    #[arg(long, global = true)]
    force: bool,
    /// worker threads, 0 = all cores
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset as trial directories
    Simulate,
    /// Segment trials into gait-cycle windows
    Preprocess,
    /// Train one model ([model] section) on all windows
    Train,
    /// Run the protocol x model x feature-set grid
    Evaluate {
        /// evaluate the reference against itself instead of trained models
        #[arg(long)]
        oracle: bool,
    },
    /// Plot percentile bands from the evaluation traces
    Report,
}

fn run(args: Args) -> Result<Outcome, Error> {
    let base = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = base.with_overrides(args.seed, args.out.clone(), args.jobs);
    if let Command::Evaluate { oracle: true } = args.command {
        cfg.evaluate.oracle = true;
    }
    cfg.validate()?;
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match args.command {
        Command::Simulate => cli::cmd_simulate(&cfg, args.force),
        Command::Preprocess => cli::cmd_preprocess(&cfg, args.force),
        Command::Train => cli::cmd_train(&cfg, args.force),
        Command::Evaluate { .. } => cli::cmd_evaluate(&cfg, args.force),
        Command::Report => cli::cmd_report(&cfg, args.force),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { 0 });
        }
    };
    match run(args) {
        Ok(outcome) => {
            for f in &outcome.findings {
                eprintln!("finding: {f}");
            }
            println!("{} ({} files)", outcome.dir.display(), outcome.files.len());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
