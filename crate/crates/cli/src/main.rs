use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use infopriv::Error;

mod commands;
mod config;
mod report;
mod selftest;

use commands::RunContext;
use config::{EvalMode, RunConfig};

#[derive(Parser)]
#[command(name = "infopriv", version, about = "Train and certify privacy-preserving sensor mappings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the data and solver seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// How decisions on evaluation samples are made.
    #[arg(long, value_enum)]
    mode: Option<EvalMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a privacy mapping and fusion rule.
    Train(Common),
    /// Certify a trained model against the exact joint or samples.
    Certify(Common),
    /// Train and certify over a grid of one fixture parameter.
    Sweep(Common),
    /// Write a synthetic dataset and its joint model.
    GenData(Common),
    /// Check the oracle against closed-form values.
    OracleSelftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_SUPPORT: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return EXIT_OTHER;
    };
    match e {
        Error::Config(_)
        | Error::Schema(_)
        | Error::UnknownLoss(_)
        | Error::UnknownKernel(_)
        | Error::UnknownMetric(_)
        | Error::UnsupportedKernel(_)
        | Error::InfeasibleCorrelation { .. }
        | Error::EmptyAfterFiltering
        | Error::InvalidDistribution(_) => EXIT_CONFIG,
        Error::BarrierViolation { .. } | Error::InfeasibleProjection | Error::InvalidTrainingSet(_) => EXIT_SOLVER,
        Error::SupportTooLarge { .. } => EXIT_SUPPORT,
        _ => EXIT_OTHER,
    }
}

fn context(c: Common) -> Result<RunContext, (u8, anyhow::Error)> {
    let cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| (EXIT_CONFIG, e))?,
        None => RunConfig::default(),
    };
    let mut cfg = cfg.with_seed(c.seed);
    if let Some(m) = c.mode {
        cfg.mode = m;
    }
    cfg.validate().map_err(|e| (EXIT_CONFIG, e.into()))?;
    Ok(RunContext {
        mode: cfg.mode,
        cfg,
        out: c.out,
    })
}

fn selftest(seed: u64) -> anyhow::Result<()> {
    let checks = selftest::run(seed);
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if failed > 0 {
        anyhow::bail!("{failed} of {} oracle checks failed", checks.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = |c: Common, f: fn(&RunContext) -> anyhow::Result<()>| match context(c) {
        Ok(ctx) => f(&ctx).map_err(|e| (exit_code(&e), e)),
        Err(e) => Err(e),
    };
    let outcome = match cli.command {
        Command::Train(c) => run(c, commands::cmd_train),
        Command::Certify(c) => run(c, commands::cmd_certify),
        Command::Sweep(c) => run(c, commands::cmd_sweep),
        Command::GenData(c) => run(c, commands::cmd_gen_data),
        Command::OracleSelftest { seed } => selftest(seed).map_err(|e| (EXIT_OTHER, e)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
