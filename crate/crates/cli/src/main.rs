use std::io::{self, BufReader};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sbice_cli::error::EXIT_CONFIG;
use sbice_cli::{commands, worker, CliError, Regime, RunConfig};

#[derive(Parser)]
#[command(name = "sbice", version, about = "Simulation-based inference for benchmarking causal-effect estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; the SBICE_THREADS environment variable takes precedence.
    #[arg(long)]
    threads: Option<usize>,
    /// Suppress progress output.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate or ingest the source dataset.
    Simulate(Common),
    /// Run SMC-ABC against the source.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Continue from the last sealed generation.
        #[arg(long)]
        resume: bool,
    },
    /// Emit posterior and/or prior datasets.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Emit only this regime.
        #[arg(long, value_enum)]
        regime: Option<Regime>,
    },
    /// Classifier AUC and Mean BSE for both regimes.
    Evaluate(Common),
    /// Write summary.md.
    Report(Common),
    /// simulate, infer, generate, evaluate, and report in sequence.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Serve the external simulator protocol from a builtin model.
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        model: String,
        /// Answer one request, then exit.
        #[arg(long)]
        oneshot: bool,
    },
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match std::env::var("SBICE_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| CliError::Config(format!("SBICE_THREADS must be a positive integer, got `{v}`")))?,
        ),
        Err(_) => flag,
    };
    match threads {
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure {n} threads: {e}"))),
        None => Ok(()),
    }
}

type Action<'a> = Box<dyn Fn(&RunConfig, commands::Log) -> Result<(), CliError> + 'a>;

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, action): (&Common, Action<'_>) = match &cli.command {
        Command::Worker { model, oneshot } => {
            let stdin = io::stdin();
            return worker::serve(model, *oneshot, BufReader::new(stdin.lock()), io::stdout().lock());
        }
        Command::Simulate(c) => (c, Box::new(|cfg, log| commands::cmd_simulate(cfg, log))),
        Command::Infer { common, resume } => (common, Box::new(move |cfg, log| commands::cmd_infer(cfg, *resume, log))),
        Command::Generate { common, regime } => (
            common,
            Box::new(move |cfg, log| {
                let regimes = regime.map_or(Regime::BOTH.to_vec(), |r| vec![r]);
                commands::cmd_generate(cfg, &regimes, log)
            }),
        ),
        Command::Evaluate(c) => (c, Box::new(|cfg, log| commands::cmd_evaluate(cfg, log).map(drop))),
        Command::Report(c) => (c, Box::new(|cfg, log| commands::cmd_report(cfg, log).map(drop))),
        Command::Run { common, resume } => (common, Box::new(move |cfg, log| commands::cmd_run(cfg, *resume, log).map(drop))),
    };
    let cfg = RunConfig::from_path(&common.config)?;
    configure_threads(common.threads)?;
    let log = |line: &str| eprintln!("{line}");
    action(&cfg, if common.quiet { &commands::quiet } else { &log })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
