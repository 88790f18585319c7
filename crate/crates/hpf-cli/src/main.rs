//! Batch driver for forecaster experiments.
//!
//! Exit codes: 0 on success with all certificates satisfied, 1 on a
//! certificate violation (the violating row is printed), 2 on configuration
//! errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hpf_core::experiments::{run, ExperimentConfig, Mode};
use hpf_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "hpf",
    about = "Hierarchical partitioning forecasters: certification runs, synthetic nowcasting, data generation",
    long_about = None
)]
struct Cli {
    /// Experiment configuration file (JSON). Defaults are used for any
    /// section the file omits.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Mode override: regret-certify | switching-certify | nowcast | synth-data.
    #[arg(long, value_name = "M")]
    mode: Option<String>,

    /// Seed override (also replaces per-section seeds).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Output directory; every artifact is written underneath it.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Reproduce the printed (lagged) minimizer indexing of the second-order
    /// learner instead of the corrected follow-the-approximate-leader form.
    #[arg(long)]
    strict_paper_indexing: bool,

    /// Advance switching rates on the model's global round clock instead of
    /// per-segment clocks.
    #[arg(long)]
    global_switch_clock: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Ok(threads) = std::env::var("HPF_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                // A failed build means a pool already exists; keep going.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: HPF_THREADS must be a positive integer, got '{threads}'");
                return ExitCode::from(2);
            }
        }
    }

    let mut config = match load_config(&cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.strict_paper_indexing |= cli.strict_paper_indexing;
    config.global_switch_clock |= cli.global_switch_clock;

    match run(&config, &cli.out) {
        Ok(outcome) if outcome.all_satisfied => {
            println!("{}", outcome.message);
            ExitCode::SUCCESS
        }
        Ok(outcome) => {
            eprintln!("{}", outcome.message);
            ExitCode::from(1)
        }
        Err(e @ (Error::InvalidArgument(_) | Error::Parse(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let mode_override = match &cli.mode {
        Some(m) => Some(m.parse::<Mode>().map_err(|e| e.to_string())?),
        None => None,
    };
    match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let mut config = ExperimentConfig::from_json(&text).map_err(|e| e.to_string())?;
            if let Some(mode) = mode_override {
                config.mode = mode;
            }
            Ok(config)
        }
        None => {
            let mode = mode_override
                .ok_or_else(|| "either --config or --mode is required".to_string())?;
            Ok(ExperimentConfig {
                mode,
                seed: 1,
                strict_paper_indexing: false,
                global_switch_clock: false,
                regret: None,
                switching: None,
                nowcast: None,
                synth: None,
            })
        }
    }
}
