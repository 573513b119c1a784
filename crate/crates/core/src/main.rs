use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qcompat::cli::{self, CliError, Overrides, Report, EXIT_INPUT_ERROR};
use qcompat::feasibility::SolverRegistry;

#[derive(Parser)]
#[command(name = "qcompat", version, about = "Compatibility and ordering oracles for quantum channels and POVMs")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer the query in a problem file.
    Run {
        problem: PathBuf,
        /// Feasibility tolerance.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "max-iters")]
        max_iters: Option<usize>,
        /// Feasibility solver (see `qcompat solvers`).
        #[arg(long)]
        solver: Option<String>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Re-check the certificates of a report without running a solver.
    Verify {
        report: PathBuf,
        problem: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// List registered solvers.
    Solvers,
}

fn emit(report: &Report, out: Option<&Path>) -> Result<(), CliError> {
    let text = report.to_json();
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(problem: &Path, overrides: Overrides, out: Option<&Path>, quiet: bool) -> i32 {
    let text = match cli::read_file(problem) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT_ERROR;
        }
    };
    let report = match cli::run_problem(&text, &overrides) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            Report::from_error(&text, &e)
        }
    };
    if let Err(e) = emit(&report, out) {
        eprintln!("error: {e}");
        return EXIT_INPUT_ERROR;
    }
    if !quiet && report.error.is_none() {
        eprintln!("{}: {:?}", report.query, report.verdict);
    }
    report.verdict.exit_code()
}

fn verify(report: &Path, problem: &Path, quiet: bool) -> i32 {
    let outcome = cli::read_file(problem)
        .and_then(|p| cli::read_file(report).map(|r| (p, r)))
        .and_then(|(p, r)| cli::verify_report(&p, &r));
    match outcome {
        Ok(o) => {
            if !quiet {
                for (k, v) in &o.residuals {
                    println!("{k} = {v:.3e}");
                }
                for f in &o.failures {
                    println!("failure: {f}");
                }
            }
            if o.passed() {
                if !quiet {
                    println!("verified (cert_tol {:.1e})", o.cert_tol);
                }
                0
            } else {
                for (k, v) in o.violations() {
                    eprintln!("residual {k} = {v:.3e} exceeds {:.1e}", o.cert_tol);
                }
                for f in &o.failures {
                    eprintln!("error: {f}");
                }
                EXIT_INPUT_ERROR
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT_ERROR
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match args.command {
        Command::Run {
            problem,
            tol,
            seed,
            max_iters,
            solver,
            out,
            quiet,
        } => run(
            &problem,
            Overrides {
                feas_tol: tol,
                seed,
                max_iters,
                solver,
            },
            out.as_deref(),
            quiet,
        ),
        Command::Verify { report, problem, quiet } => verify(&report, &problem, quiet),
        Command::Solvers => {
            for name in SolverRegistry::with_defaults().names() {
                println!("{name}");
            }
            0
        }
    };
    ExitCode::from(code as u8)
}
