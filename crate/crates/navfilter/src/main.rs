use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use navfilter::config::{load_config, Backend};
use navfilter::{harness, validate};

#[derive(Debug, Parser)]
#[command(name = "navfilter", version, about = "SE2(3) inertial navigation filter runs")]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Debug, clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
}

#[derive(Debug, Subcommand)]
enum Mode {
    /// Simulate a trajectory and run the filter on it.
    Simulate(Common),
    /// Run the filter on EuRoC-style IMU and ground-truth files.
    Replay(Common),
    /// Run the property checks and write a pass/fail report.
    Validate(Common),
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (Mode::Simulate(c) | Mode::Replay(c) | Mode::Validate(c)) = &cli.mode;
    let mut cfg = load_config(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(b) = c.backend {
        cfg.backend = b;
    }
    let out = harness::output_dir(&cfg, c.out.as_deref());
    match cli.mode {
        Mode::Simulate(_) => Ok(harness::simulate(&cfg, &out)?.metrics.invariants_hold()),
        Mode::Replay(_) => Ok(harness::replay(&cfg, &out)?.metrics.invariants_hold()),
        Mode::Validate(_) => {
            let results = validate::validate(&cfg)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let path = out.join("validate.csv");
            let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = std::io::BufWriter::new(file);
            validate::write_report(&mut w, &results)?;
            std::io::Write::flush(&mut w)?;
            validate::write_report(std::io::stdout().lock(), &results)?;
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NAVFILTER_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::error!("invariant breach or failed property");
            ExitCode::from(1)
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
