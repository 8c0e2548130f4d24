use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod selftest;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "walllaw", version, about = "Boundary-layer correctors, slip matrices and wall-law diagnostics")]
struct Cli {
    /// JSON run configuration; defaults are used for every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "walllaw-out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for random profiles and randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also solve at a second resolution and report the difference.
    #[arg(long, global = true)]
    refine: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve both cell problems and dump the correctors.
    Corrector,
    /// Slip matrix with symmetry and definiteness diagnostics.
    SlipMatrix,
    /// Shear-driven channel over the rough wall.
    Channel(ChannelArgs),
    /// Box-scale sweep of wall-law residuals over a list of epsilons.
    WalllawReport(ReportArgs),
    /// Evaluate the half-space extension of a corrector trace.
    HalfspaceEval(HalfspaceArgs),
    /// Quick built-in verification suite.
    Selftest,
}

#[derive(Debug, Args)]
struct ChannelArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    nper: Option<usize>,
    /// Lid velocity as `U1,U2`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    utop: Option<Vec<f64>>,
    #[arg(long, conflicts_with = "navier_stokes")]
    stokes: bool,
    #[arg(long)]
    navier_stokes: bool,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_picard: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Scan `x3 e1 + eps v1(x/eps)` instead of channel solutions.
    #[arg(long)]
    manufactured: bool,
}

#[derive(Debug, Args)]
struct HalfspaceArgs {
    /// Spectral trace JSON; without it the trace of corrector `halfspace.j` is used.
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Why a run stopped; maps onto the exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Selftest(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Solver(_) => 2,
            Failure::Selftest(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let solver = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<walllaw::Error>(),
                Some(walllaw::Error::SolverDiverged { .. } | walllaw::Error::PicardDiverged { .. })
            )
        });
        if solver {
            Failure::Solver(e)
        } else {
            Failure::Config(e)
        }
    }
}

impl From<walllaw::Error> for Failure {
    fn from(e: walllaw::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(Failure::Config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Channel(a) => {
            let c = &mut cfg.channel;
            if let Some(v) = a.epsilon {
                c.epsilon = v;
            }
            if let Some(v) = a.nper {
                c.nper = v;
            }
            if let Some(v) = &a.utop {
                match v.as_slice() {
                    [u1, u2] => c.u_top = [*u1, *u2],
                    _ => return Err(Failure::Config(anyhow::anyhow!("--utop expects two values `U1,U2`"))),
                }
            }
            if a.stokes {
                c.nonlinear = false;
            }
            if a.navier_stokes {
                c.nonlinear = true;
            }
            if let Some(v) = a.tol {
                c.tol = v;
            }
            if let Some(v) = a.max_picard {
                c.max_picard = v;
            }
        }
        Command::WalllawReport(a) if a.manufactured => cfg.report.manufactured = true,
        Command::HalfspaceEval(HalfspaceArgs { trace: Some(t) }) => cfg.halfspace.trace = Some(t.clone()),
        _ => {}
    }
    cfg.validate().map_err(Failure::Config)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(anyhow::anyhow!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::Config(anyhow::anyhow!("creating {}: {e}", cli.out.display())))?;
    let ctx = commands::Context::new(cfg, cli.out.clone(), cli.refine).map_err(Failure::Config)?;
    let result = match cli.command {
        Command::Corrector => commands::corrector(&ctx),
        Command::SlipMatrix => commands::slip_matrix(&ctx),
        Command::Channel(_) => commands::channel(&ctx),
        Command::WalllawReport(_) => commands::walllaw_report(&ctx),
        Command::HalfspaceEval(_) => commands::halfspace_eval(&ctx),
        Command::Selftest => selftest::run(&ctx),
    };
    if let Err(Failure::Solver(e)) = &result {
        ctx.write_failure(e);
    }
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("error: {e:#}"),
                Failure::Solver(e) => eprintln!("solver failure: {e:#}"),
                Failure::Selftest(n) => eprintln!("selftest: {n} check(s) failed"),
            }
            ExitCode::from(f.code())
        }
    }
}
