use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use genfam_cli::{run_file, RunOptions, RunReport};

#[derive(Parser)]
#[command(name = "genfam", version, about = "Critical sets, Hessians and Lagrangian checks for generating families")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file and write its report.
    Run {
        problem: PathBuf,
        /// RNG seed for multistart, overriding `solve.rng_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Sample table (CSV) path, overriding `outputs.samples_path`.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Report (JSON) path, overriding `outputs.report_path`. Without one the report goes to stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-read a report and recompute its verdicts from the stored samples.
    Check { report: PathBuf },
}

fn configure_threads() {
    if let Some(n) = std::env::var("GENFAM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match cli.command {
        Command::Run { problem, seed, samples, report } => {
            let opts = RunOptions {
                seed,
                report_path: report,
                samples_path: samples,
            };
            match run_file(&problem, &opts) {
                Ok(outcome) => {
                    if outcome.report_path.is_none() {
                        match outcome.report.to_json() {
                            Ok(bytes) => print!("{}", String::from_utf8_lossy(&bytes)),
                            Err(e) => {
                                eprintln!("error: {e}");
                                return ExitCode::from(1);
                            }
                        }
                    }
                    let r = &outcome.report;
                    let class = r
                        .classification
                        .as_ref()
                        .map(|c| c.classification.to_string())
                        .unwrap_or_else(|| "none".into());
                    eprintln!("classification: {class}; samples: {}; status: {:?}", r.hessian.samples, r.status);
                    for note in &r.notes {
                        eprintln!("note: {note}");
                    }
                    ExitCode::from(outcome.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Check { report } => match RunReport::read(&report) {
            Ok(r) => {
                let recomputed = r.recompute_verdicts();
                let stored = r.verification.as_ref().map(|v| v.verdicts);
                println!("stored:     {stored:?}");
                println!("recomputed: {recomputed:?}");
                if recomputed == stored && r.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
    }
}
