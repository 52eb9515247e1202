use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toolnet_cli::commands;
use toolnet_cli::config::{self, Config};
use toolnet_cli::error::{CliError, Result};
use toolnet_cli::experiments::{self, ExperimentPlan};

#[derive(Parser)]
#[command(name = "toolnet", version, about = "Train and evaluate multi-label tool-presence networks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset (frames, annotations, manifest).
    Generate,
    /// Choose validation videos and write split.json.
    Split,
    /// Train a network and write its checkpoint and log.
    Train,
    /// Score frames with a trained model and write predictions.csv.
    Predict {
        /// Training output directory (default: eval.model_dir).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Compute per-tool and macro AUC of a prediction file.
    Eval {
        /// Prediction CSV (default: eval.predictions).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Run an experiment plan and print the mean±std AUC grid.
    Experiments {
        /// Built-in plan name or plan file (default: experiment.plan).
        #[arg(long)]
        plan: Option<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => config::load_config(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    let out = &cli.common.out;
    match cli.command {
        Command::Generate => {
            let path = commands::cmd_generate(&cfg, out)?;
            println!("wrote {}", path.display());
        }
        Command::Split => {
            let plan = commands::cmd_split(&cfg, out)?;
            println!("validation videos: {}", plan.val_video_ids.join(", "));
            if !plan.excluded_tools.is_empty() {
                println!("excluded tools: {}", plan.excluded_tools.join(", "));
            }
        }
        Command::Train => {
            let run = commands::cmd_train(&cfg, out)?;
            match &run.outcome.final_report {
                Some(r) => print!("{r}"),
                None => println!("trained {} iterations without validation", run.outcome.iterations_run),
            }
        }
        Command::Predict { model } => {
            let dir = model
                .or(cfg.eval.model_dir.clone())
                .ok_or_else(|| CliError::config("eval.model_dir", "no model directory given (--model)"))?;
            let path = out.join("predictions.csv");
            let p = commands::cmd_predict(&cfg, &dir, &path)?;
            println!("wrote {} rows to {}", p.rows.len(), path.display());
        }
        Command::Eval { predictions } => {
            let path = predictions
                .or(cfg.eval.predictions.clone())
                .ok_or_else(|| CliError::config("eval.predictions", "no prediction file given (--predictions)"))?;
            let report = commands::cmd_eval(&cfg, &path, Some(out))?;
            print!("{report}");
        }
        Command::Experiments { plan } => {
            if let Some(p) = plan {
                cfg.experiment.plan = p;
            }
            let plan = ExperimentPlan::resolve(&cfg)?;
            let rows = experiments::run_plan(&plan, Some(out))?;
            print!("{}", experiments::format_grid(&experiments::summarize(&rows)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
