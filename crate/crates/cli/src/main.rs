use std::path::PathBuf;

use clap::builder::TypedValueParser as _;
use clap::{Parser, Subcommand};

mod cmd_oracles;
mod cmd_render;
mod out;

#[derive(Parser)]
#[command(name = "vpn", about = "Value prediction networks on the Collect gridworld")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration file (key = value lines); defaults apply if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the seeds in the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes metrics, checkpoints, and a config snapshot.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (must be empty or absent).
        #[arg(long)]
        out: PathBuf,
        /// Actor thread count; overrides train.workers.
        #[arg(long)]
        workers: Option<usize>,
        /// Compute precision in bits.
        #[arg(long, default_value_t = 32, value_parser = clap::builder::PossibleValuesParser::new(["32", "64"]).map(|s| s.parse::<u8>().unwrap()))]
        precision: u8,
    },
    /// Mean return of both reference policies per environment variant.
    Oracles {
        #[command(flatten)]
        config: ConfigArgs,
        /// Seeded episodes per variant.
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        /// Directory for oracles.csv; prints to stdout either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a trained checkpoint over seeded episodes.
    Eval {
        /// Checkpoint file written by train.
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        /// Planning depth; overrides train.d_test.
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one checkpoint across a range of planning depths.
    DepthSweep {
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        /// Comma-separated depths to sweep.
        #[arg(long, default_value = "1,2,3,4,5")]
        depths: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print episodes as text frames, one per executed option.
    Render {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Policy to roll out.
        #[arg(long, default_value = "shortest", value_parser = ["greedy", "shortest"])]
        policy: String,
        /// Checkpoint for model policies; also overlays the planned path.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the numeric property suite and report each check.
    Verify {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().cmd {
        Cmd::Train { .. } => anyhow::bail!("train: not wired up yet"),
        Cmd::Oracles { config, episodes, out } => cmd_oracles::run(&config, episodes, out.as_deref()),
        Cmd::Eval { .. } => anyhow::bail!("eval: not wired up yet"),
        Cmd::DepthSweep { .. } => anyhow::bail!("depth-sweep: not wired up yet"),
        Cmd::Render { config, episodes, policy, checkpoint } => {
            cmd_render::run(&config, episodes, &policy, checkpoint.as_deref())
        }
        Cmd::Verify { .. } => anyhow::bail!("verify: not wired up yet"),
    }
}

impl ConfigArgs {
    /// Load the config (or defaults) and apply the --seed override to both
    /// the environment and training seeds.
    fn load(&self, require_total_steps: bool) -> anyhow::Result<vpn_core::RunSetup> {
        let mut setup = match &self.config {
            Some(path) => vpn_core::config::load_run_setup(path, require_total_steps)?,
            None => {
                if require_total_steps {
                    anyhow::bail!("train needs --config with train.total_steps set");
                }
                vpn_core::RunSetup::default()
            }
        };
        if let Some(seed) = self.seed {
            setup.grid.seed = seed;
            setup.train.seed = seed;
        }
        Ok(setup)
    }
}
