use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use clipscore::check::{SuiteOptions, DEFAULT_SEEDS, DEFAULT_TOLERANCE};
use clipscore::cli::{self, ExperimentSpec, EXIT_CHECK_FAILED, EXIT_NUMERIC, EXIT_OK};
use clipscore::data::SynthParams;
use clipscore::Result;

/// Clip-based action quality assessment on synthetic or stored video datasets.
///
/// Exit codes: 0 success, 1 check failure, 2 usage or input error,
/// 3 numerical failure. CLIPSCORE_THREADS caps internal parallelism
/// (default 1).
#[derive(Parser)]
#[command(name = "clipscore", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file with known ground-truth scores.
    Synth {
        /// Number of samples.
        #[arg(long)]
        count: usize,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset path.
        #[arg(long)]
        out: PathBuf,
        /// Stored frame height.
        #[arg(long, default_value_t = 128)]
        height: usize,
        /// Stored frame width.
        #[arg(long, default_value_t = 171)]
        width: usize,
    },
    /// Check every backward rule, every layer and the tiny end-to-end
    /// pipeline against central differences at 64-bit.
    Gradcheck {
        /// Experiment spec; its train.seed offsets the check seeds.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Random seeds per check.
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: u64,
        /// Only run checks whose name contains this text.
        #[arg(long)]
        filter: Option<String>,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Train the spec's model; writes metrics.csv, best.ckpt and report.json
    /// to the output directory.
    Train {
        /// Experiment spec (JSON).
        #[arg(long)]
        spec: PathBuf,
    },
    /// Evaluate a checkpoint on the spec's test split and print the report
    /// as JSON.
    Eval {
        /// Experiment spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every configuration of the spec's matrix and write matrix.csv.
    Matrix {
        /// Experiment spec (JSON).
        #[arg(long)]
        spec: PathBuf,
    },
}

fn print_epoch(r: &clipscore::train::EpochRecord) {
    eprintln!(
        "epoch {:>3}  train_loss {:.4}  test_loss {:.4}  test_spearman {:.4}",
        r.epoch, r.train_loss, r.test_loss, r.test_spearman
    );
}

/// Prints a line, ignoring a closed pipe.
fn print_stdout(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth { count, seed, out, height, width } => {
            let params = SynthParams::new(count, seed).frame_size(height, width);
            print_stdout(&cli::cmd_synth(&params, &out)?);
        }
        Command::Gradcheck { spec, tolerance, seeds, filter, inject_fault } => {
            let base_seed = match spec {
                Some(p) => ExperimentSpec::load(p)?.train.seed,
                None => 0,
            };
            let opts = SuiteOptions { seeds, base_seed, fault: inject_fault, filter };
            let failed = cli::cmd_gradcheck(&opts, tolerance, &mut std::io::stdout())?;
            if !failed.is_empty() {
                let names: Vec<_> = failed.iter().map(|r| r.name).collect();
                eprintln!("gradient check failed: {}", names.join(", "));
                return Ok(EXIT_CHECK_FAILED);
            }
        }
        Command::Train { spec } => {
            let spec = ExperimentSpec::load(spec)?;
            let report = cli::cmd_train(&spec, print_epoch)?;
            print_stdout(&cli::report_json(&report));
        }
        Command::Eval { spec, checkpoint } => {
            let spec = ExperimentSpec::load(spec)?;
            let report = cli::cmd_eval(&spec, &checkpoint)?;
            print_stdout(&cli::report_json(&report));
        }
        Command::Matrix { spec } => {
            let spec = ExperimentSpec::load(spec)?;
            let (csv, numerical_failure) = cli::cmd_matrix(&spec, |e, r| {
                eprint!("{} {} {} {}  ", e.depth, e.conv_type.label(), e.clip_len, e.aggregation.label());
                print_epoch(r);
            })?;
            print_stdout(csv.trim_end());
            if numerical_failure {
                return Ok(EXIT_NUMERIC);
            }
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let code = run(Cli::parse()).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        cli::exit_code(&e)
    });
    ExitCode::from(code as u8)
}
