use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rlaif_lab::experiment::{self, default_out_dir, summary_lines};
use rlaif_lab::report::ExperimentResult;
use rlaif_lab::Result;

/// Exit status when some declared check fails.
const CHECK_FAILED: u8 = 1;
/// Exit status for parse, validation and runtime errors.
const ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "rlaif-lab", version, about = "Run and verify latent-value RLAIF experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config, writing `<out>/<stem>.result` and its CSV tables.
    Run {
        config: PathBuf,
        /// Output directory [default: $RLAIF_LAB_OUT or ./results]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Run the bundled suite and print one line per check.
    ReproduceAll {
        /// Only the bundled config of this experiment kind.
        #[arg(long)]
        only: Option<String>,
        /// Replace every bundled seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory [default: $RLAIF_LAB_OUT or ./results]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn status(results: &[&ExperimentResult]) -> ExitCode {
    if results.iter().all(|r| r.all_passed()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CHECK_FAILED)
    }
}

fn run(config_path: &Path, out: &Path) -> Result<ExitCode> {
    let config = experiment::load_config(config_path)?;
    let result = experiment::execute(&config)?;
    let stem = config_path.file_stem().map_or_else(|| config.experiment.kind().to_string(), |s| s.to_string_lossy().into_owned());
    let written = experiment::write_outputs(out, &stem, &config, &result)?;
    for line in summary_lines(&result) {
        println!("{line}");
    }
    println!("wrote {}", written[0].display());
    Ok(status(&[&result]))
}

fn reproduce_all(only: Option<&str>, seed: Option<u64>, out: &Path) -> Result<ExitCode> {
    let results = experiment::reproduce_all(only, seed, Some(out))?;
    let (mut passed, mut total) = (0, 0);
    for (_, result) in &results {
        for line in summary_lines(result) {
            println!("{line}");
        }
        total += result.checks.len();
        passed += result.checks.iter().filter(|c| c.passed).count();
        println!("{}: {:.2}s", result.experiment, result.duration_secs);
    }
    println!("{passed}/{total} checks passed across {} experiments", results.len());
    Ok(status(&results.iter().map(|(_, r)| r).collect::<Vec<_>>()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, out } => run(config, &out.clone().unwrap_or_else(default_out_dir)),
        Command::Validate { config } => experiment::load_config(config).map(|c| {
            println!("{}: valid {} config", config.display(), c.experiment.kind());
            ExitCode::SUCCESS
        }),
        Command::ReproduceAll { only, seed, out } => reproduce_all(only.as_deref(), *seed, &out.clone().unwrap_or_else(default_out_dir)),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(ERROR)
    })
}
