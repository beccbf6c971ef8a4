use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tomocal::cli::{compare_solvers, run_experiment, Overrides};

#[derive(Parser)]
#[command(
    name = "tomocal",
    version,
    about = "Fan-beam CT reconstruction with unknown source poses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the config's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Fit view poses in parallel with this many workers.
    #[arg(long, global = true, value_name = "WORKERS")]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a problem and reconstruct it.
    Run { config: PathBuf },
    /// Reconstruct the same problem with each linear solver.
    Compare { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let ov = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir,
        parallel: cli.parallel,
    };
    let code = match &cli.command {
        Command::Run { config } => run_experiment(config, &ov),
        Command::Compare { config } => compare_solvers(config, &ov),
    };
    ExitCode::from(code as u8)
}
