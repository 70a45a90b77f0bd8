use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ltc_core::harness::{self, parse_seed_set, ExperimentConfig, Mode};
use ltc_core::Error;

#[derive(Parser)]
#[command(name = "ltc", version, about = "Transition-operator acceleration for deterministic diffusion sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Angle traces between consecutive transitions, and the detected interval.
    Angles(RunArgs),
    /// Per-iteration weights from reference runs.
    Calibrate(RunArgs),
    /// Bias search and the PSNR-versus-bias sweep.
    Refine(RunArgs),
    /// Accelerated sampling against the full-sampling baseline.
    Sample(RunArgs),
    /// Accelerated sampling against the skipping-steps baseline at equal NFE.
    AblateSkip(RunArgs),
    /// Every table above in one directory.
    Report(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset underneath the config file.
    #[arg(long)]
    preset: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Output directory; falls back to the config's `out`, then `LTC_OUT`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds overriding the config, e.g. `0,1,2` or `100..120`.
    #[arg(long, num_args = 1..)]
    seed_set: Option<Vec<String>>,
}

fn execute(mode: Mode, args: RunArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::load(args.config.as_deref(), args.preset.as_deref())?;
    cfg.mode = mode;
    if let Some(items) = &args.seed_set {
        cfg.seeds = parse_seed_set(items)?;
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os("LTC_OUT").map(PathBuf::from))
        .ok_or_else(|| Error::Config("no output directory: pass --out, set `out`, or set LTC_OUT".into()))?;
    let result = harness::run(&cfg, &out, args.jobs)?;
    // A closed stdout (e.g. piped into `head`) is not a failure of the run.
    let mut stdout = std::io::stdout().lock();
    let _ = match result.interval {
        Some((a, b)) => writeln!(stdout, "interval [{a}, {b}], bias {}", result.bias),
        None => writeln!(stdout, "no acceleration interval"),
    };
    for (method, r) in &result.reports {
        if method != "full" {
            log::info!("seed {} {method}: nfe {} psnr {:.3} dB", r.seed, r.nfe, r.psnr);
        }
    }
    let _ = writeln!(stdout, "{} files in {}", result.files.len(), result.dir.display());
    let _ = writeln!(stdout, "content hash {}", result.content_hash);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (mode, args) = match cli.command {
        Command::Angles(a) => (Mode::Angles, a),
        Command::Calibrate(a) => (Mode::Calibrate, a),
        Command::Refine(a) => (Mode::Refine, a),
        Command::Sample(a) => (Mode::Sample, a),
        Command::AblateSkip(a) => (Mode::AblateSkip, a),
        Command::Report(a) => (Mode::Report, a),
    };
    match execute(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
