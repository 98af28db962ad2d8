use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mobrisk::report::{self, Command, CommandError, Overrides};

/// Inter-county mobility analytics and double-risk model fits.
#[derive(Debug, Parser)]
#[command(name = "mobrisk", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Run configuration (JSON).
    #[arg(long, global = true, default_value = "mobrisk.json")]
    config: PathBuf,

    /// Output directory; overrides `output` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for the synthetic world (synth only).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Load and cross-check the inputs; writes validation.json.
    Validate,
    /// Trend, baseline, percent-change, region and destination tables.
    Analyze,
    /// Daily lagged correlations between region outflow and case rates.
    Correlate,
    /// Double-risk fits and external-risk importance.
    Fit,
    /// Generate a synthetic input triplet.
    Synth,
    /// Run validate, analyze, correlate and fit into one directory.
    Report,
}

impl Cmd {
    fn command(&self) -> Command {
        match self {
            Cmd::Validate => Command::Validate,
            Cmd::Analyze => Command::Analyze,
            Cmd::Correlate => Command::Correlate,
            Cmd::Fit => Command::Fit,
            Cmd::Synth => Command::Synth,
            Cmd::Report => Command::Report,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(3);
        }
    };
    if cli.seed.is_some() && !matches!(cli.command, Cmd::Synth) {
        eprintln!("error: --seed applies to synth only");
        return ExitCode::from(3);
    }
    if let Some(n) = cli.jobs {
        if n == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(3);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let overrides = Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
    };
    let command = cli.command.command();
    match report::run(command, &cli.config, &overrides) {
        Ok(outcome) => {
            if let Some(v) = &outcome.validation {
                for w in v.warnings() {
                    eprintln!("warning: [{}] {}", w.code, w.message);
                }
            }
            println!(
                "{}: wrote {} files to {}",
                command.name(),
                outcome.manifest.outputs.len() + 1,
                outcome.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let CommandError::Validation(r) = &e {
                for i in r.fatal() {
                    match &i.location {
                        Some(l) => eprintln!("fatal: [{}] {l}: {}", i.code, i.message),
                        None => eprintln!("fatal: [{}] {}", i.code, i.message),
                    }
                }
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
