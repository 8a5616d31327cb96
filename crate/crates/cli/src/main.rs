use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tmb_cli::{run, Command, Invocation};
use tmb_core::Precision;

#[derive(Parser)]
#[command(name = "tmb", version, about = "Radial nodal solutions of -Δu = λ u exp(u² + α|u|^β) on the unit disk")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one problem (k, α, β, λ).
    Solve(Common),
    /// Solve every member of a parameter family.
    Sweep(Common),
    /// Rescaled bubble profiles against the Liouville solution.
    Profile(Common),
    /// Run a family and check the concentration laws.
    Verify(Common),
    /// Zeros of J₀ and the radial Dirichlet eigenvalues.
    Bessel {
        #[command(flatten)]
        common: Common,
        /// Number of eigenpairs.
        #[arg(long)]
        k: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Double,
    Extended,
    Auto,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common, k) = match cli.command {
        Cmd::Solve(c) => (Command::Solve, c, None),
        Cmd::Sweep(c) => (Command::Sweep, c, None),
        Cmd::Profile(c) => (Command::Profile, c, None),
        Cmd::Verify(c) => (Command::Verify, c, None),
        Cmd::Bessel { common, k } => (Command::Bessel, common, k),
    };
    let inv = Invocation {
        command: Some(command),
        config: common.config,
        out: common.out,
        jobs: common.jobs,
        precision: common.precision.map(|p| match p {
            PrecisionArg::Double => Precision::Double,
            PrecisionArg::Extended => Precision::Extended,
            PrecisionArg::Auto => Precision::Auto,
        }),
        k,
    };
    match run(&inv) {
        Ok(outcome) => {
            for line in &outcome.report {
                println!("{line}");
            }
            for f in &outcome.failures {
                eprintln!("failed: {f}");
            }
            eprintln!("wrote {} files to {}", outcome.files.len(), outcome.output_dir.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("tmb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
