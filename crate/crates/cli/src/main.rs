//! `qls`: run trapping analyses, solves, verification suites and sweeps from a TOML config.
//!
//! Exit codes: 0 when every asserted check passes, 1 for I/O trouble, 2 for a
//! rejected config, 3 for numerical failures or failed checks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use qls_cli::config::{Mode, RunConfig, SchemaError};
use qls_cli::{emit, run};

#[derive(Parser, Debug)]
#[command(name = "qls", version, about = "Spectral experiments for quasilinear Schrödinger flows")]
struct Args {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ray ensembles (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new().filter_level(if args.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn }).init();
    match real_main(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<SchemaError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn real_main(args: Args) -> anyhow::Result<ExitCode> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = args.out {
        cfg.output.dir = d;
    }
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(SchemaError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    log::info!("mode {:?} on grid {:?}", cfg.mode, cfg.grid);
    let mut report = run::RunReport::new(cfg.clone());
    let mut timings = run::Timings::default();
    run::run(&cfg, &mut report, &mut timings);
    let files = emit::emit(&report, &timings, &cfg.output.dir)?;
    for f in &files {
        log::info!("wrote {}", f.display());
    }
    for v in report.verdicts.iter().filter(|v| v.asserted && !v.passed) {
        eprintln!("check failed: {} = {:e} (bound {:e})", v.name, v.value, v.bound);
    }
    if let Some(f) = &report.failure {
        eprintln!("numerical failure: {f}");
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(3) })
}
