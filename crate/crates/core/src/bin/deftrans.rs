use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deftrans::cli::{self, RunConfig};

#[derive(Parser)]
#[command(name = "deftrans", version, about = "Non-rigid point cloud registration toolkit")]
struct Args {
    /// Run configuration (JSON with `schema_version`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the sweep base seed and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic pair bundles for the configured sweep.
    Gen,
    /// Train descriptor parameters on a directory of bundles.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Start from this checkpoint instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Register bundles and write registered clouds, metrics and error PLYs.
    Register {
        #[arg(long)]
        params: Option<PathBuf>,
        /// A bundle or a directory of bundles.
        #[arg(long)]
        pairs: PathBuf,
    },
    /// Aggregate registration metrics over a directory of bundles.
    Eval {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
    },
    /// Benchmark along the configured challenge axis.
    Bench {
        #[arg(long)]
        params: Option<PathBuf>,
        /// Use existing bundles instead of generating the sweep.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Convert 4DMatch-style `.npz` records into bundles.
    #[command(name = "ingest-4dmatch")]
    Ingest4dmatch {
        /// A record file or a directory of records.
        #[arg(long)]
        archive: PathBuf,
    },
}

fn run(args: &Args) -> deftrans::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = args.out.as_path();
    match &args.command {
        Command::Gen => {
            let m = cli::cmd_gen(&cfg, out)?;
            log::info!("wrote {} bundles to {}", m.bundles.len(), out.display());
        }
        Command::Train { data, init } => {
            let path = cli::cmd_train(&cfg, data, init.as_deref(), out)?;
            log::info!("wrote {}", path.display());
        }
        Command::Register { params, pairs } => {
            for (name, m) in cli::cmd_register(&cfg, params.as_deref(), pairs, out)? {
                println!(
                    "{name}: initial {:.6} registered {:.6}",
                    m.initial_mean_distance, m.registered_mean_distance
                );
            }
        }
        Command::Eval { params, data } => {
            let r = cli::cmd_eval(&cfg, params.as_deref(), data, out)?;
            println!(
                "{} pairs: mean initial {:.6}, mean registered {:.6}, median registered {:.6}",
                r.names.len(),
                r.metrics.mean_initial,
                r.metrics.mean_registered,
                r.metrics.median_registered
            );
        }
        Command::Bench { params, data } => {
            let r = cli::cmd_bench(&cfg, params.as_deref(), data.as_deref(), out)?;
            print!("{}", r.to_csv());
        }
        Command::Ingest4dmatch { archive } => {
            let written = cli::cmd_ingest_4dmatch(archive, out)?;
            log::info!("wrote {} bundles to {}", written.len(), Path::new(out).display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new().filter_level(args.log_level).init();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
