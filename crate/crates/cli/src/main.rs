use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use graph_bayes_cli::{run, ConfigError, ExperimentConfig, ExperimentKind, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "graph-bayes", version, about = "Graph-based Bayesian learning experiments on the sphere")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; must be absent or empty.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for independent jobs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Default parent for runs without an explicit output directory.
        #[arg(long, env = OUTPUT_ROOT_ENV, default_value = "runs")]
        output_root: PathBuf,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the available experiment kinds.
    ListExperiments,
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<(ExperimentConfig, ExperimentKind), ConfigError> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let kind = config.validate()?;
    Ok((config, kind))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListExperiments => {
            for kind in ExperimentKind::ALL {
                println!("{:<18} {}", kind.name(), kind.description());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config, seed } => match load(&config, seed) {
            Ok((cfg, kind)) => {
                println!("ok: {kind} with {} cloud size(s) x {} replicate(s)", cfg.n.len(), cfg.replicates);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run {
            config,
            out,
            seed,
            jobs,
            output_root,
        } => {
            let (mut cfg, kind) = match load(&config, seed) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| output_root.join(format!("{kind}-seed{}", cfg.seed)));
            cfg.output_dir = Some(out.clone());
            match run(&cfg, &out, jobs) {
                Ok(report) => {
                    println!(
                        "wrote {} files to {} in {:.1}s",
                        report.manifest.outputs.len(),
                        report.out.display(),
                        report.manifest.wall_time_seconds
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
