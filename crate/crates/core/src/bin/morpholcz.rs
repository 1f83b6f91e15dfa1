use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use morpholcz::pipeline::{write_synthetic_site, Site, Stage};
use morpholcz::synth::SynthSpec;

#[derive(Parser)]
#[command(name = "morpholcz", version, about = "Local Climate Zone mapping from urban morphometrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StageArgs {
    /// Site configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Re-run the stage and its prerequisites even when cached outputs are current.
    #[arg(long)]
    force: bool,
    /// Maximum number of worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and clean buildings, streets and barriers.
    Ingest(StageArgs),
    /// Build enclosures and enclosed tessellation cells.
    Tessellate(StageArgs),
    /// Compute the primary morphometric attributes per cell.
    Metrics(StageArgs),
    /// Contextualize attributes over the contiguity neighbourhood.
    Context(StageArgs),
    /// Split reference polygons into stratified folds and label cells.
    Folds(StageArgs),
    /// Train and cross-validate the cell-level morphometric classifier.
    TrainS1(StageArgs),
    /// Burn the most important attributes onto the imagery grid.
    Rasterize(StageArgs),
    /// Train the grid-level spectral + morphometric classifier.
    TrainS3(StageArgs),
    /// Train the patch-level embedding + morphometric classifier.
    TrainS4(StageArgs),
    /// Summarize cross-validation scores of every scheme.
    Evaluate(StageArgs),
    /// Render LCZ maps.
    Map(StageArgs),
    /// Write a synthetic city with its site configuration.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn run(cli: Cli) -> morpholcz::Result<()> {
    let (target, args) = match cli.command {
        Command::Synth { out, seed } => {
            std::fs::create_dir_all(&out).map_err(|e| morpholcz::Error::io(&out, e))?;
            let cfg = write_synthetic_site(&out, &SynthSpec::default(), seed)?;
            println!("{}", cfg.display());
            return Ok(());
        }
        Command::Ingest(a) => (Stage::Ingest, a),
        Command::Tessellate(a) => (Stage::Tessellate, a),
        Command::Metrics(a) => (Stage::Metrics, a),
        Command::Context(a) => (Stage::Context, a),
        Command::Folds(a) => (Stage::Folds, a),
        Command::TrainS1(a) => (Stage::TrainS1, a),
        Command::Rasterize(a) => (Stage::Rasterize, a),
        Command::TrainS3(a) => (Stage::TrainS3, a),
        Command::TrainS4(a) => (Stage::TrainS4, a),
        Command::Evaluate(a) => (Stage::Evaluate, a),
        Command::Map(a) => (Stage::Map, a),
    };
    if let Some(n) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| morpholcz::Error::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let site = Site::load(&args.config)?;
    for stage in Stage::ALL.into_iter().filter(|&s| s <= target) {
        let status = site.run_stage(stage, args.force)?;
        println!("{:<11} {:?}", stage.name(), status);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
