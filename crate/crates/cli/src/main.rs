//! `tastr`: simulate camera networks, train and evaluate the progressive
//! tracklet-association pipeline.

mod commands;
mod config;
mod fail;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use crate::config::RunConfig;
use crate::fail::{Fail, EXIT_CONFIG};

#[derive(Parser, Debug)]
#[command(
    name = "tastr",
    version,
    about = "Train and evaluate cross-camera tracklet association"
)]
struct Cli {
    /// Cap on worker threads for data-parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic camera network with ground truth.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for tracklets.jsonl, topology.json and ground_truth.json.
        #[arg(long, required_unless_present = "print_config")]
        out: Option<PathBuf>,
    },
    /// Within-camera training followed by progressive association and
    /// cross-camera training.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding tracklets.jsonl and topology.json.
        #[arg(long, required_unless_present = "print_config")]
        data: Option<PathBuf>,
        /// Run directory.
        #[arg(long, required_unless_present = "print_config")]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Matches CSV to score against ground truth.
        #[arg(long)]
        matches: Option<PathBuf>,
        /// Directory for metrics.json and cmc.csv; metrics are printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One association pass with a fixed checkpoint.
    Associate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, required_unless_present = "print_config")]
        checkpoint: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_config")]
        data: Option<PathBuf>,
        /// Output matches CSV.
        #[arg(long, required_unless_present = "print_config")]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Ablation {
    NoStr,
    NoKmeans,
    NoProgressive,
    None,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// TOML config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of association + cross-camera rounds.
    #[arg(long)]
    iterations: Option<usize>,
    /// Disable pipeline components; may be repeated.
    #[arg(long, value_enum)]
    ablation: Vec<Ablation>,
    /// Use per-camera identities from the dataset.
    #[arg(long)]
    weak: bool,
    /// Print the fully resolved config as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig, Fail> {
        let mut cfg = commands::config_path_or_default(self.config.as_ref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.iterations {
            cfg.training.n_iterations = n;
        }
        for a in &self.ablation {
            match a {
                Ablation::NoStr => cfg.association.use_str = false,
                Ablation::NoKmeans => cfg.association.use_kmeans = false,
                Ablation::NoProgressive => cfg.training.progressive = false,
                Ablation::None => {}
            }
        }
        if self.weak {
            cfg.training.weakly_supervised = true;
        }
        Ok(cfg)
    }
}

fn init_threads(threads: Option<usize>) -> Result<(), Fail> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Fail::msg(EXIT_CONFIG, "--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Fail::new(fail::EXIT_STAGE, e))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the parallel feature; --threads {n} has no effect");
    Ok(())
}

/// Prints the config and returns true when `--print-config` was given.
fn maybe_print(common: &CommonArgs, cfg: &RunConfig) -> bool {
    if common.print_config {
        print!("{}", cfg.to_toml());
    }
    common.print_config
}

fn dispatch(cli: Cli) -> Result<(), Fail> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Simulate { common, out } => {
            let cfg = common.resolve()?;
            if maybe_print(&common, &cfg) {
                return Ok(());
            }
            commands::simulate(&cfg, &out.expect("required by clap"))
        }
        Command::Run { common, data, out } => {
            let cfg = common.resolve()?;
            if maybe_print(&common, &cfg) {
                return Ok(());
            }
            commands::run(
                &cfg,
                &data.expect("required by clap"),
                &out.expect("required by clap"),
            )
        }
        Command::Eval {
            checkpoint,
            data,
            matches,
            out,
        } => {
            let report = commands::eval(&checkpoint, &data, matches.as_deref(), out.as_deref())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            Ok(())
        }
        Command::Associate {
            common,
            checkpoint,
            data,
            out,
        } => {
            let cfg = common.resolve()?;
            if maybe_print(&common, &cfg) {
                return Ok(());
            }
            commands::associate(
                &cfg,
                &checkpoint.expect("required by clap"),
                &data.expect("required by clap"),
                &out.expect("required by clap"),
            )
            .map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TASTR_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
