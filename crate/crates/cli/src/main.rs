use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use prodcast_cli::config::{BaselineModel, Overrides, RunConfig};
use prodcast_cli::pipeline::{self, UsageError};
use prodcast_core::corpus::Format;

#[derive(Parser, Debug)]
#[command(
    name = "prodcast",
    version,
    about = "Forecast author publication productivity"
)]
struct Cli {
    /// TOML run configuration; omitted keys take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increment source: full, lstm_only, unit_scale, const_poisson[(c)]
    #[arg(long, global = true)]
    mode: Option<String>,
    /// First forecast year
    #[arg(long = "t-x", global = true)]
    t_x: Option<i32>,
    /// Last forecast year
    #[arg(long = "t-y", global = true)]
    t_y: Option<i32>,
    /// Ensemble size per author
    #[arg(long, global = true)]
    rollouts: Option<usize>,
    /// Highest starting level included in reports
    #[arg(long = "level-cap", global = true)]
    level_cap: Option<usize>,
    /// Print the resolved configuration as TOML and exit
    #[arg(long = "print-config", global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse records and write the per-author series cache
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// csv or dblp; defaults to data.format
        #[arg(long)]
        format: Option<Format>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a synthetic record file from the [synth] section
    Synth {
        #[arg(long)]
        output: PathBuf,
    },
    /// Cross-validate and train the recurrent network
    Train {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Long-horizon and one-step forecasts for the cohort
    Forecast {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Fit a shallow baseline and forecast with it
    Baseline {
        #[arg(long)]
        cache: PathBuf,
        /// piecewise or combined; defaults to baseline.model
        #[arg(long, value_parser = parse_model)]
        model: Option<BaselineModel>,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Trend, distribution and probability reports for a forecast
    Report {
        #[arg(long)]
        forecast: PathBuf,
        /// One-step forecast used for the short-term probability report
        #[arg(long)]
        short: Option<PathBuf>,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

fn parse_model(s: &str) -> Result<BaselineModel, String> {
    match s {
        "piecewise" => Ok(BaselineModel::Piecewise),
        "combined" => Ok(BaselineModel::Combined),
        _ => Err(format!("unknown baseline model '{s}'")),
    }
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        mode: cli.mode,
        t_x: cli.t_x,
        t_y: cli.t_y,
        rollouts: cli.rollouts,
        level_cap: cli.level_cap,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)
        .map_err(|e| e.context(UsageError("invalid configuration".into())))?;
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(UsageError("no subcommand given; see --help".into()).into());
    };
    match command {
        Command::Ingest {
            input,
            format,
            output,
        } => {
            pipeline::ingest(&cfg, &input, format, &output)?;
        }
        Command::Synth { output } => {
            pipeline::synth(&cfg, &output)?;
        }
        Command::Train { cache, out_dir } => {
            pipeline::cmd_train(&cfg, &cache, &out_dir)?;
        }
        Command::Forecast {
            cache,
            checkpoint,
            out_dir,
        } => {
            pipeline::cmd_forecast(&cfg, &cache, &checkpoint, &out_dir)?;
        }
        Command::Baseline {
            cache,
            model,
            out_dir,
        } => {
            pipeline::cmd_baseline(&cfg, &cache, model.unwrap_or(cfg.baseline.model), &out_dir)?;
        }
        Command::Report {
            forecast,
            short,
            cache,
            out_dir,
        } => {
            pipeline::cmd_report(&cfg, &forecast, short.as_ref(), &cache, &out_dir)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.downcast_ref::<UsageError>().is_some()
        || err
            .chain()
            .any(|c| c.is::<UsageError>() || c.is::<std::io::Error>());
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
