use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fcme_cli::commands::{cmd_compare, cmd_run, cmd_sweep, cmd_verify};
use fcme_cli::{CliError, CliResult, ExperimentConfig};
use fcme_core::verify::Fault;

#[derive(Parser)]
#[command(name = "fcme", version, about = "Mean-field SGDA experiments for functional conditional moment equations")]
struct Cli {
    /// Output root for run directories.
    #[arg(long, global = true, env = "FCME_OUT", default_value = "runs")]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and record its metrics at every checkpoint.
    Run { config: PathBuf },
    /// Run one child experiment per value of a config parameter.
    Sweep {
        config: PathBuf,
        /// Dotted parameter name, e.g. `dynamics.alpha`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        /// Give every child the base seed instead of `seed + index`, so all
        /// values start from the same initialization.
        #[arg(long)]
        common_seed: bool,
    },
    /// Coupled SGDA / PGDA / CTPGDA / ideal-particle runs against a wide reference.
    CompareDynamics { config: PathBuf },
    /// Run the fast invariant suite.
    Verify {
        /// Break the code under test on purpose to check the suite catches it.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    FlipDualSign,
}

fn load(path: &Path, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().expect("thread pool is configured once");
    }
    let result: CliResult<()> = match &cli.command {
        Command::Run { config } => load(config, cli.seed).and_then(|c| cmd_run(&c, &cli.out)).map(|dir| println!("{}", dir.display())),
        Command::Sweep { config, param, values, common_seed } => {
            cmd_sweep(config, param, values, cli.seed, *common_seed, &cli.out).map(|dir| println!("{}", dir.display()))
        }
        Command::CompareDynamics { config } => {
            load(config, cli.seed).and_then(|c| cmd_compare(&c, &cli.out)).map(|dir| println!("{}", dir.display()))
        }
        Command::Verify { inject_fault } => {
            let fault = inject_fault.map(|FaultArg::FlipDualSign| Fault::FlipDualSign);
            cmd_verify(cli.seed.unwrap_or(1), fault, &mut std::io::stdout()).map(|_| ())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
