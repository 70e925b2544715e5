use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use telerain::synth::{write_dataset, SyntheticSpec};
use telerain::{Pipeline, PipelineConfig, PipelineError, Stage, StageOutcome};

#[derive(Parser)]
#[command(
    name = "forecast",
    version,
    about = "Long-range station rainfall forecasting pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StageArgs {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Rerun even when artifacts exist or were built with another config.
    #[arg(long)]
    force: bool,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, screen and impute stations; build the monthly panel.
    Ingest(StageArgs),
    /// Group stations by location and climatology.
    Cluster(StageArgs),
    /// Station edge features and the terrain precipitation field.
    Physics(StageArgs),
    /// Screen climate indices and assemble one graph per cluster.
    Graph(StageArgs),
    /// Grid-search and train one model per cluster and fold.
    Train(StageArgs),
    /// Backtest predictions and the operational forecast.
    Predict(StageArgs),
    /// Fit seasonal tail distributions and map predicted extremes.
    MapExtremes(StageArgs),
    /// Score test predictions with and without tail mapping.
    Evaluate(StageArgs),
    /// Grid forecasts onto a lon/lat raster.
    RenderMap(StageArgs),
    /// Every stage in order.
    All(StageArgs),
    /// Write the synthetic dataset and its config.
    Synth {
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SyntheticSpec::default().seed)]
        seed: u64,
    },
}

fn run_stages(args: &StageArgs, stages: &[Stage]) -> Result<(), PipelineError> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let pipeline = Pipeline::new(config, args.force)?;
    for &stage in stages {
        let outcome = pipeline.run(stage)?;
        let verb = match outcome {
            StageOutcome::Ran => "done",
            StageOutcome::Skipped => "skipped (up to date)",
        };
        println!("{stage}: {verb}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth { out, seed } => write_dataset(
            out,
            &SyntheticSpec {
                seed: *seed,
                ..SyntheticSpec::default()
            },
        )
        .map(|path| println!("wrote {}", path.display())),
        Command::All(a) => run_stages(a, &Stage::ALL),
        Command::Ingest(a) => run_stages(a, &[Stage::Ingest]),
        Command::Cluster(a) => run_stages(a, &[Stage::Cluster]),
        Command::Physics(a) => run_stages(a, &[Stage::Physics]),
        Command::Graph(a) => run_stages(a, &[Stage::Graph]),
        Command::Train(a) => run_stages(a, &[Stage::Train]),
        Command::Predict(a) => run_stages(a, &[Stage::Predict]),
        Command::MapExtremes(a) => run_stages(a, &[Stage::MapExtremes]),
        Command::Evaluate(a) => run_stages(a, &[Stage::Evaluate]),
        Command::RenderMap(a) => run_stages(a, &[Stage::RenderMap]),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
