use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msglab::par::Exec;
use msglab_cli::config::read_seed_file;
use msglab_cli::{resolve_out, run, CliError, ExperimentConfig, Kind, Overrides, RunOptions, OUT_ENV};

#[derive(Parser)]
#[command(name = "msglab", version, about = "Pessimistic Q-ensemble experiments on toy MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: $MSGLAB_OUT/<kind> or runs/<kind>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Primary seed of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// File with one seed per line.
    #[arg(long, global = true)]
    seeds: Option<PathBuf>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// CI-scale settings.
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Seed sweep counting optimistic shared-target LCB estimates.
    ValidateTheorem,
    /// Closed-form LCB against the iterative recursions on random instances.
    OracleCheck,
    /// Ensemble uncertainty on the continuous chain for every target rule.
    ToyChain {
        /// Also write an SVG of the std curves.
        #[arg(long)]
        svg: bool,
    },
    /// Train and evaluate MSG on the continuous chain.
    MsgTrain,
    /// Finite-difference gradient checks for every architecture.
    GradCheck {
        #[arg(long, hide = true)]
        inject_sign_bug: bool,
    },
    /// Print the default config of one kind, or of all kinds.
    PrintConfig {
        kind: Option<Kind>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (kind, svg, inject_sign_bug) = match cli.command {
        Command::PrintConfig { kind } => {
            let kinds = kind.map(|k| vec![k]).unwrap_or_else(|| Kind::ALL.to_vec());
            for (i, k) in kinds.into_iter().enumerate() {
                let mut cfg = ExperimentConfig::default_for(k);
                if cli.quick {
                    cfg.quick();
                }
                if i > 0 {
                    println!();
                }
                print!("{}", cfg.to_toml());
            }
            return Ok(());
        }
        Command::ValidateTheorem => (Kind::ValidateTheorem, false, false),
        Command::OracleCheck => (Kind::OracleCheck, false, false),
        Command::ToyChain { svg } => (Kind::ToyChain, svg, false),
        Command::MsgTrain => (Kind::MsgTrain, false, false),
        Command::GradCheck { inject_sign_bug } => (Kind::GradCheck, false, inject_sign_bug),
    };

    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_for(kind),
    };
    if cfg.kind() != kind {
        return Err(CliError::Config(format!("config is for {}, not {}", cfg.kind().name(), kind.name())));
    }
    let seeds = cli.seeds.as_deref().map(read_seed_file).transpose()?;
    cfg.apply(&Overrides { out: cli.out.clone(), seed: cli.seed, seeds, quick: cli.quick })?;
    if let ExperimentConfig::ToyChain(c) = &mut cfg {
        c.svg |= svg;
    }

    let exec = configure_workers(cli.workers)?;
    let env_root = std::env::var_os(OUT_ENV).map(PathBuf::from);
    let out = resolve_out(&cfg, env_root.as_deref());
    let result = run(&cfg, &RunOptions { out: out.clone(), exec, inject_sign_bug })?;
    for line in &result.lines {
        println!("{line}");
    }
    println!("wrote {} files to {}", result.manifest.files.len() + 1, out.display());
    match result.failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[cfg(feature = "parallel")]
fn configure_workers(workers: Option<usize>) -> Result<Exec, CliError> {
    match workers {
        Some(0) => Err(CliError::Config("--workers must be >= 1".into())),
        Some(1) => Ok(Exec::Sequential),
        Some(k) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| CliError::Internal(e.to_string()))?;
            Ok(Exec::Parallel)
        }
        None => Ok(Exec::default()),
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_workers(workers: Option<usize>) -> Result<Exec, CliError> {
    if workers == Some(0) {
        return Err(CliError::Config("--workers must be >= 1".into()));
    }
    Ok(Exec::Sequential)
}
