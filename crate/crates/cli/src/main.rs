use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use perfhom_cli::{parse_seeds, prepare, replay, run, CliError, ExperimentConfig, Overrides};

/// Run perforated-domain homogenization experiments from a JSON config.
#[derive(Parser, Debug)]
#[command(name = "perfhom", version)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long, required_unless_present = "replay")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds as a list of integers and half-open ranges, e.g. `0..8,12`.
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    parallel: Option<usize>,
    /// Re-run a manifest and compare artifact hashes.
    #[arg(long, conflicts_with = "config")]
    replay: Option<PathBuf>,
}

fn main_inner(args: Args) -> Result<(), CliError> {
    if let Some(manifest) = args.replay {
        let report = replay(&manifest, args.parallel)?;
        for e in &report.entries {
            println!("{}\t{}\t(on disk: {}, rerun: {})", e.status(), e.path, e.on_disk, e.rerun);
        }
        let drift = report.drift_count();
        if drift > 0 {
            return Err(CliError::Drift(drift));
        }
        println!("replay: no drift");
        return Ok(());
    }
    let path = args.config.expect("clap enforces --config without --replay");
    let overrides = Overrides {
        out: args.out,
        seeds: args.seeds.as_deref().map(parse_seeds).transpose()?,
        parallel: args.parallel,
    };
    let cfg = prepare(ExperimentConfig::load(&path)?, &overrides)?;
    let manifest = run(&cfg)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    for a in &manifest.artifacts {
        println!("{}\t{}", a.sha256, a.path);
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
