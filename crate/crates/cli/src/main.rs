//! `jumpmfg`: solve, simulate, and stress the pure-jump mean-field model
//! from one TOML configuration. Exit codes: 0 success, 2 unusable
//! configuration, 3 fixed-point non-convergence, 1 anything else.

mod config;
mod run;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use run::{Ctx, Failure};

#[derive(Parser)]
#[command(name = "jumpmfg", version, about = "Pure-jump mean-field equilibrium toolkit")]
struct Cli {
    /// TOML run configuration; the built-in reference setup when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; every random stream of the run derives from it.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Worker threads for replica simulation; 0 takes all cores. Any worker
    /// count produces byte-identical outputs.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory for CSV/JSON results and the run manifest.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Probe the structural hypotheses (intensity bounds, Lipschitz moduli,
    /// concavity) and report the growth constant they imply.
    Hypcheck,
    /// Push the initial measure forward under a constant control.
    Kinetic,
    /// Backward value sweep against the frozen constant-control curve.
    Hjb,
    /// Fixed-point the forward flow against the backward sweep.
    Equilibrium,
    /// Simulate the n-player jump system under a constant control.
    Simulate {
        #[arg(long)]
        players: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Gap between a test functional of the simulated n-player terminal
    /// measure and its mean-field value, over a ladder of system sizes.
    FunctionalGap {
        /// Comma-separated system sizes, e.g. 20,40,80.
        #[arg(long = "N", value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
    },
    /// Best payoff improvement a tagged deviator can extract from the
    /// equilibrium, over a ladder of system sizes.
    NashGap {
        /// Comma-separated system sizes, e.g. 10,20,40,80.
        #[arg(long = "N", value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
    },
    /// Verify the smoothing and projection inequalities on a parameter sweep.
    MollifyCheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Hypcheck => "hypcheck",
            Command::Kinetic => "kinetic",
            Command::Hjb => "hjb",
            Command::Equilibrium => "equilibrium",
            Command::Simulate { .. } => "simulate",
            Command::FunctionalGap { .. } => "functional-gap",
            Command::NashGap { .. } => "nash-gap",
            Command::MollifyCheck => "mollify-check",
        }
    }
}

fn write_manifest(
    cli: &Cli,
    config_sha256: &str,
    wall_ms: u128,
    outputs: &[String],
) -> Result<(), Failure> {
    let manifest = serde_json::json!({
        "command": cli.command.name(),
        "config_sha256": config_sha256,
        "seed": cli.seed,
        "workers": cli.workers,
        "wall_ms": wall_ms,
        "outputs": outputs,
        "versions": {
            "jumpmfg": jumpmfg::VERSION,
            "jumpmfg-cli": env!("CARGO_PKG_VERSION"),
        },
    });
    let path = cli.out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Failure::Other(e.to_string()))?;
    std::fs::write(&path, text + "\n")
        .map_err(|e| Failure::Other(format!("cannot write {}: {e}", path.display())))
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let cfg = config::load(cli.config.as_deref()).map_err(Failure::Config)?;
    let hash = cfg.canonical_sha256();

    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .map_err(|e| Failure::Other(format!("cannot size the worker pool: {e}")))?;
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| Failure::Other(format!("cannot create {}: {e}", cli.out_dir.display())))?;

    let ctx = Ctx {
        cfg: &cfg,
        seed: cli.seed,
        out_dir: &cli.out_dir,
    };
    let started = Instant::now();
    let result = match &cli.command {
        Command::Hypcheck => run::hypcheck(&ctx),
        Command::Kinetic => run::kinetic(&ctx),
        Command::Hjb => run::hjb(&ctx),
        Command::Equilibrium => run::equilibrium(&ctx),
        Command::Simulate { players, reps } => run::simulate(&ctx, *players, *reps),
        Command::FunctionalGap { n_list } => run::functional_gap(&ctx, n_list.clone()),
        Command::NashGap { n_list } => run::nash_gap(&ctx, n_list.clone()),
        Command::MollifyCheck => run::mollify_check(&ctx),
    };
    let wall_ms = started.elapsed().as_millis();

    match result {
        Ok(outputs) => write_manifest(cli, &hash, wall_ms, &outputs),
        Err(Failure::NonConverged { message, outputs }) => {
            write_manifest(cli, &hash, wall_ms, &outputs)?;
            Err(Failure::NonConverged { message, outputs })
        }
        Err(e) => Err(e),
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}
