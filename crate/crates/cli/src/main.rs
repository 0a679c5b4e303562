use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fedeba_cli::{
    cmd_oracle, cmd_partition, cmd_run, resolve_output_dir, ExperimentConfig, OracleRequest,
};

#[derive(Parser)]
#[command(
    name = "fedeba",
    version,
    about = "Federated learning simulator with entropy-based aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write per-round CSVs plus a summary.
    Run(ConfigArgs),
    /// Write the configured client partition as CSV.
    Partition(ConfigArgs),
    /// Print a closed-form oracle as key=value lines.
    #[command(subcommand)]
    Oracle(Oracle),
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides FEDEBA_OUTPUT_DIR and the config.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Oracle {
    /// Two-client quadratic round.
    #[command(name = "toy")]
    Toy {
        #[arg(long, default_value_t = 0.25)]
        eta_l: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
    },
    /// Regression variance under uniform and entropy-based aggregation.
    #[command(name = "glr_variance")]
    GlrVariance {
        /// Client parameter vectors: `1,2;3,4` is two clients in two dimensions.
        #[arg(long, allow_hyphen_values = true)]
        params: String,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
    /// Grid search confirming the softmax maximises entropy.
    #[command(name = "entropy_grid")]
    EntropyGrid {
        /// Comma-separated losses, one per client (at most 3).
        #[arg(long, allow_hyphen_values = true)]
        losses: String,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 0.001)]
        grid: f64,
        #[arg(long, default_value_t = 0.005)]
        slack: f64,
        /// Dominance tolerance; defaults to slack/tau.
        #[arg(long)]
        tolerance: Option<f64>,
    },
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number {:?}", t.trim()))
        })
        .collect()
}

fn oracle_request(o: Oracle) -> Result<OracleRequest> {
    Ok(match o {
        Oracle::Toy { eta_l, tau, q } => OracleRequest::Toy { eta_l, tau, q },
        Oracle::GlrVariance { params, scale, tau } => OracleRequest::GlrVariance {
            params: params.split(';').map(parse_list).collect::<Result<_>>()?,
            design_scale: scale,
            tau,
        },
        Oracle::EntropyGrid {
            losses,
            tau,
            grid,
            slack,
            tolerance,
        } => OracleRequest::EntropyGrid {
            losses: parse_list(&losses)?,
            tau,
            grid_step: grid,
            slack,
            tolerance,
        },
    })
}

fn load(args: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = ExperimentConfig::from_path(&args.config)
        .with_context(|| format!("invalid config {}", args.config.display()))?;
    let dir = resolve_output_dir(&cfg, args.output.as_deref());
    Ok((cfg, dir))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, dir) = load(&args)?;
            let outcome = cmd_run(&cfg, &dir)?;
            println!(
                "wrote {} seed(s) to {}",
                outcome.trajectories.len(),
                outcome.output_dir.display()
            );
        }
        Command::Partition(args) => {
            let (cfg, dir) = load(&args)?;
            println!("wrote {}", cmd_partition(&cfg, &dir)?.display());
        }
        Command::Oracle(o) => print!("{}", cmd_oracle(&oracle_request(o)?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
