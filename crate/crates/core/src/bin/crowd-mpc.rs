use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crowd_mpc::config::ControllerChoice;
use crowd_mpc::harness::{aggregate, pid_steady_error, run_batch, run_pairs};
use crowd_mpc::report::{self, RunSummary, UnpairedSummary, CONFIG_FILE};
use crowd_mpc::supervisor::ControllerKind;
use crowd_mpc::{Error, Result, RunConfig};

const FULL_SCALE_PAIRS: usize = 2000;
const STEADY_ERROR_DURATION: f64 = 90.0;

#[derive(Parser)]
#[command(name = "crowd-mpc", version, about = "MPC vs PID speed control through a crossing crowd")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate episodes and write logs, summary and histograms.
    Run(RunArgs),
    /// Rebuild histograms and the density table from an existing run.
    Report {
        /// Output directory of a previous run.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Single crowd size, replacing the configured list.
    #[arg(long)]
    n_ped: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Base seed; CROWD_MPC_SEED takes precedence.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    controller: Option<ControllerChoice>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-step force, decision and QP traces.
    #[arg(long)]
    trace: bool,
    /// Run 2000 pairs per crowd size.
    #[arg(long, conflicts_with = "episodes")]
    full_scale: bool,
}

fn effective_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let run = &mut cfg.run;
    if let Some(n) = args.n_ped {
        run.densities = vec![n];
    }
    if let Some(e) = args.episodes {
        run.episodes = e;
    }
    if args.full_scale {
        run.episodes = FULL_SCALE_PAIRS;
    }
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if let Ok(s) = std::env::var("CROWD_MPC_SEED") {
        run.seed = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("CROWD_MPC_SEED is not a u64: {s:?}")))?;
    }
    if let Some(c) = args.controller {
        run.controller = c;
    }
    if let Some(w) = args.workers {
        run.workers = w;
    }
    if let Some(o) = &args.out {
        run.out = o.clone();
    }
    run.trace |= args.trace;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let out: &Path = &cfg.run.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.to_flat_string())?;

    let mut densities = Vec::new();
    let mut unpaired = Vec::new();
    for &n in &cfg.run.densities {
        eprintln!("{n} pedestrians: {} episodes", cfg.run.episodes);
        match cfg.run.controller {
            ControllerChoice::Both => {
                let pairs = run_pairs(cfg, n, cfg.run.episodes, Some(out))?;
                densities.push(aggregate(n, &pairs)?);
            }
            single => {
                let kind = if single == ControllerChoice::Mpc { ControllerKind::Mpc } else { ControllerKind::Pid };
                let records: Vec<_> = run_batch(cfg, n, cfg.run.episodes, &[kind], Some(out))?
                    .into_iter()
                    .flatten()
                    .collect();
                unpaired.push(UnpairedSummary::from_records(n, kind, &records)?);
            }
        }
    }
    let summary = RunSummary {
        seed: cfg.run.seed,
        episodes: cfg.run.episodes,
        controller: cfg.run.controller,
        densities,
        unpaired,
        pid_steady_error: pid_steady_error(cfg, STEADY_ERROR_DURATION)?,
    };
    summary.save(out)?;
    report::write_derived(out, &summary)?;
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => effective_config(args).and_then(|cfg| run(&cfg)),
        Command::Report { out } => report::regenerate(out),
    };
    match result {
        Ok(summary) => {
            print!("{}", report::density_table(&summary));
            if summary.collisions() > 0 {
                eprintln!("error: {} episode(s) with a collision", summary.collisions());
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
