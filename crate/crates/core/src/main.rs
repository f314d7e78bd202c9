use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffdesign::harness::{self, emit_plot, HarnessConfig, PlotKind, RunManifest};
use diffdesign::Error;

#[derive(Parser)]
#[command(name = "diffdesign", version, about = "Diffusion-model inverse design experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config, or the manifest of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed; overrides `run.root_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect optimizer trajectories into a dataset.
    Datagen(Common),
    /// Train a denoiser on a dataset.
    Train(Common),
    /// Draw conditional samples from a checkpoint and score them.
    Sample(Common),
    /// Run the CEM and Adam baselines.
    Optimize(Common),
    /// Run the experiment named in the config.
    Experiment(Common),
    /// Render a CSV as SVG next to it.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        /// line, bar or scene
        #[arg(long, default_value = "line")]
        kind: PlotKind,
    },
}

fn setup(c: &Common) -> Result<HarnessConfig, Error> {
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &c.config {
        Some(p) => HarnessConfig::load(p)?,
        None => HarnessConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.run.root_seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Option<RunManifest>, Error> {
    let manifest = match cli.command {
        Command::Datagen(c) => harness::run_datagen(&setup(&c)?, &c.out)?,
        Command::Train(c) => harness::run_train(&setup(&c)?, &c.out)?,
        Command::Sample(c) => harness::run_sample(&setup(&c)?, &c.out)?,
        Command::Optimize(c) => harness::run_optimize(&setup(&c)?, &c.out)?,
        Command::Experiment(c) => harness::run_experiment(&setup(&c)?, &c.out)?,
        Command::Plot { csv, kind } => {
            let svg = emit_plot(&csv, kind)?;
            println!("{}", svg.display());
            return Ok(None);
        }
    };
    Ok(Some(manifest))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(Some(m)) => {
            log::info!("{}: {} evaluations in {:.1}s", m.command, m.evaluations, m.wall_clock_secs);
            for o in &m.outputs {
                println!("{o}");
            }
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
