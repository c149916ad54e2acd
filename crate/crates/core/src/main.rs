use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use daug::pipeline::{run_all, run_stage, ExperimentConfig, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "daug", version, about = "DAug heatmaps and hybrid contrastive training on synthetic chest X-rays")]
struct Cli {
    /// Experiment config (TOML). Defaults to the built-in desk config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config and every stage seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; overrides the config (DAUG_OUT overrides both).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Rebuild artifacts that were built from a different config.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Synth,
    TrainDiffusion,
    TrainClassifier,
    GenHeatmaps,
    TrainHybrid,
    Eval,
    Ablate,
    Figures,
    /// Every stage in order.
    All,
    /// Print the effective config as TOML.
    ShowConfig {
        /// Start from the reduced smoke config instead of the desk config.
        #[arg(long)]
        smoke: bool,
    },
}

fn stage(cmd: &Command) -> Option<Stage> {
    Some(match cmd {
        Command::Synth => Stage::Synth,
        Command::TrainDiffusion => Stage::Diffusion,
        Command::TrainClassifier => Stage::Classifier,
        Command::GenHeatmaps => Stage::Heatmaps,
        Command::TrainHybrid => Stage::Hybrid,
        Command::Eval => Stage::Eval,
        Command::Ablate => Stage::Ablate,
        Command::Figures => Stage::Figures,
        Command::All | Command::ShowConfig { .. } => return None,
    })
}

fn run(cli: Cli) -> daug::Result<()> {
    let mut cfg = match (&cli.config, &cli.command) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Command::ShowConfig { smoke: true }) => ExperimentConfig::smoke(),
        (None, _) => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    let opts = RunOptions { force: cli.force };
    let summaries = match (&cli.command, stage(&cli.command)) {
        (Command::ShowConfig { .. }, _) => {
            print!("{}", cfg.to_toml()?);
            return Ok(());
        }
        (_, Some(s)) => vec![run_stage(&cfg, s, opts)?],
        (_, None) => run_all(&cfg, opts)?,
    };
    for s in summaries {
        println!("{}", serde_json::to_string(&s)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
