use std::path::PathBuf;
use std::process::ExitCode;

use brainalign_cli::artifacts::OutputDir;
use brainalign_cli::error::{CliError, CliResult};
use brainalign_cli::pipeline::{Stage, Status};
use brainalign_cli::{fixture, validate, LoadedConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brainalign", version, about = "Brain-alignment scoring pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: configuration value, else all cores)
    #[arg(long)]
    jobs: Option<usize>,
    /// Replace the configured seed; refused when the output directory has artifacts
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline, or only the named stages
    Run {
        #[command(flatten)]
        args: RunArgs,
        /// localize, ceiling, score, behavioral or analyze; repeatable
        #[arg(long = "stage")]
        stages: Vec<String>,
    },
    /// Localize language-selective model units
    Localize(RunArgs),
    /// Estimate benchmark ceilings
    Ceiling(RunArgs),
    /// Score model checkpoints against benchmarks
    Score(RunArgs),
    /// Correlate surprisal with reading times
    Behavioral(RunArgs),
    /// Trajectory statistics and control comparisons
    Analyze(RunArgs),
    /// Check inputs against the data model without scoring
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Benchmark directories, .npy matrices, activation sidecars or trajectory tables
        paths: Vec<PathBuf>,
    },
    /// Write a synthetic input tree with a ready-to-run configuration
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run_stages(args: &RunArgs, stages: &[Stage]) -> CliResult<()> {
    if args.seed_override.is_some() && OutputDir::has_artifacts(&args.out) {
        return Err(CliError::Invalid(format!(
            "--seed-override refused: {} already contains artifacts",
            args.out.display()
        )));
    }
    let cfg = LoadedConfig::load(&args.config, args.seed_override)?;
    let outcomes = brainalign_cli::run(&cfg, &args.out, stages, args.jobs)?;
    let all_current = outcomes.iter().all(|o| !matches!(o.status, Status::Ran { .. }));
    for o in &outcomes {
        println!("{o}");
    }
    if all_current {
        println!("up-to-date");
    }
    Ok(())
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Run { args, stages } => {
            let stages = if stages.is_empty() {
                Stage::ALL.to_vec()
            } else {
                stages.iter().map(|s| s.parse()).collect::<CliResult<Vec<Stage>>>()?
            };
            run_stages(&args, &stages)
        }
        Command::Localize(args) => run_stages(&args, &[Stage::Localize]),
        Command::Ceiling(args) => run_stages(&args, &[Stage::Ceiling]),
        Command::Score(args) => run_stages(&args, &[Stage::Score]),
        Command::Behavioral(args) => run_stages(&args, &[Stage::Behavioral]),
        Command::Analyze(args) => run_stages(&args, &[Stage::Analyze]),
        Command::Validate { config, paths } => {
            if config.is_none() && paths.is_empty() {
                return Err(CliError::Invalid("validate needs --config or at least one path".into()));
            }
            if let Some(config) = config {
                let cfg = LoadedConfig::load(&config, None)?;
                for line in validate::validate_config(&cfg)? {
                    println!("{line}");
                }
            }
            for p in &paths {
                println!("{}", validate::validate_path(p)?);
            }
            println!("valid");
            Ok(())
        }
        Command::Fixture { out, seed } => {
            let config = fixture::write_fixture(&out, seed)?;
            println!("{}", config.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.diagnostic());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
