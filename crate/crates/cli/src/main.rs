//! `simgym`: run the synthetic-buyer A/B pipeline one stage at a time.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use simgym::pipeline::{write_synthetic_fixture, Pipeline, PipelineError, RunConfig, Stage, StageStatus};
use simgym::synth::{numbered_shops, TreatmentKind};

#[derive(Parser)]
#[command(name = "simgym", version, about = "Offline synthetic-buyer A/B testing for storefront themes")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides seeds.run_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for simulation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse clickstreams into sessions and features.
    Ingest,
    /// Cluster sessions per shop.
    Cluster,
    /// Build preferences, intents, personas and agent profiles.
    Personas,
    /// Run every agent against both themes.
    Simulate {
        /// Independent simulation runs; overrides `repeat` in the config.
        #[arg(long)]
        repeat: Option<usize>,
    },
    /// Compare agent and human A2C deltas.
    Evaluate,
    /// Cross-run sign agreement by agent count.
    Bootstrap,
    /// Render report/summary.md.
    Report,
    /// All stages in order, skipping those already up to date.
    Run,
    /// Write synthetic shops and a matching run.toml.
    Synth {
        /// Directory for the fixture files.
        #[arg(long)]
        out: PathBuf,
        /// Treatment of each shop, one shop per value.
        #[arg(long = "treatment", value_enum, num_args = 1.., default_values_t = [Kind::Deeper, Kind::NoSearch, Kind::FewerPerPage, Kind::Identical, Kind::Deeper])]
        treatments: Vec<Kind>,
        #[arg(long, default_value_t = 240)]
        buyers: usize,
        /// Share of buyers who tend to add to cart.
        #[arg(long, default_value_t = 0.45)]
        buyer_share: f64,
        #[arg(long, default_value_t = 600)]
        agents: usize,
        #[arg(long, default_value_t = 2)]
        repeat: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Identical,
    Deeper,
    NoSearch,
    FewerPerPage,
}

impl From<Kind> for TreatmentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Identical => TreatmentKind::Identical,
            Kind::Deeper => TreatmentKind::Deeper,
            Kind::NoSearch => TreatmentKind::NoSearch,
            Kind::FewerPerPage => TreatmentKind::FewerPerPage,
        }
    }
}

fn pipeline(cli: &Cli) -> Result<Pipeline, PipelineError> {
    let path = cli.config.as_ref().ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds.run_seed = seed;
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    Pipeline::new(cfg)
}

fn print_status(stage: Stage, status: &StageStatus) {
    match status {
        StageStatus::UpToDate => println!("{}: up-to-date", stage.name()),
        StageStatus::Ran { outputs } => println!("{}: wrote {outputs} file(s)", stage.name()),
    }
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    if let Command::Synth { out, treatments, buyers, buyer_share, agents, repeat } = &cli.command {
        let seed = cli.seed.unwrap_or(42);
        let kinds: Vec<TreatmentKind> = treatments.iter().map(|&k| k.into()).collect();
        let shops = numbered_shops(seed, &kinds, *buyers, *buyer_share);
        let path = write_synthetic_fixture(out, &shops, *agents, *repeat, seed)?;
        println!("wrote {}", path.display());
        return Ok(());
    }
    let p = pipeline(cli)?;
    let (stage, status) = match &cli.command {
        Command::Ingest => (Stage::Ingest, p.ingest()?),
        Command::Cluster => (Stage::Cluster, p.cluster()?),
        Command::Personas => (Stage::Personas, p.personas()?),
        Command::Simulate { repeat } => (Stage::Simulate, p.simulate(*repeat)?),
        Command::Evaluate => (Stage::Evaluate, p.evaluate()?),
        Command::Bootstrap => (Stage::Bootstrap, p.bootstrap()?),
        Command::Report => (Stage::Report, p.report()?),
        Command::Run => {
            for (stage, status) in p.run_all()? {
                print_status(stage, &status);
            }
            println!("summary: {}", p.summary_path().display());
            return Ok(());
        }
        Command::Synth { .. } => unreachable!(),
    };
    print_status(stage, &status);
    if stage == Stage::Report {
        println!("summary: {}", p.summary_path().display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
