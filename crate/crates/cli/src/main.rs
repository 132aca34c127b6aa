use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mfsde_cli::{load_config, run, CliError, ExperimentConfig, ExperimentKind, RunOptions, FALLBACK_OUT_DIR, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "mfsde", version, about = "Weak-error experiments for mean-field Euler schemes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; overrides the config's `output_dir` and $MFSDE_OUT_DIR.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override for stochastic experiments.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Changes speed only, never results.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Also write a log-log chart (chart.svg).
    #[arg(long, global = true)]
    svg: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print and write the exact constants alpha_i and beta_i.
    Constants {
        #[arg(long)]
        order: usize,
    },
    /// Residual of the left-point quadrature expansion.
    QuadratureCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Law-engine weak errors, order estimate and expansion fit.
    Converge {
        #[arg(long)]
        config: PathBuf,
    },
    /// Converge plus Richardson-Romberg combinations.
    Extrapolate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-difference residual of the backward master equation.
    MasterPdeCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Particle-system estimates on coupled levels.
    ParticleConverge {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &PathBuf, expected: ExperimentKind) -> Result<ExperimentConfig> {
    let config = load_config(path)?;
    if config.kind != expected {
        return Err(CliError::KindMismatch { expected: expected.to_string(), found: config.kind.to_string() }.into());
    }
    Ok(config)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.command {
        Command::Constants { order } => {
            let mut c = ExperimentConfig::new(ExperimentKind::Constants);
            c.order = Some(*order);
            c
        }
        Command::QuadratureCheck { config } => load(config, ExperimentKind::QuadratureCheck)?,
        Command::Converge { config } => load(config, ExperimentKind::Converge)?,
        Command::Extrapolate { config } => load(config, ExperimentKind::Extrapolate)?,
        Command::MasterPdeCheck { config } => load(config, ExperimentKind::MasterPdeCheck)?,
        Command::ParticleConverge { config } => load(config, ExperimentKind::ParticleConverge)?,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(FALLBACK_OUT_DIR));
    let options = RunOptions { out_dir: out_dir.clone(), svg: cli.svg };

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        anyhow::ensure!(t > 0, "--threads must be positive");
        pool = pool.num_threads(t);
    }
    let pool = pool.build().context("building the worker pool")?;
    let (record, outcome) = pool.install(|| run(&config, &options))?;

    print!("{}", outcome.summary);
    for note in &outcome.fit.notes {
        println!("note: {note}");
    }
    println!("wrote {} to {}", record.files.join(", "), out_dir.display());
    Ok(())
}
