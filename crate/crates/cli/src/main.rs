use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tactile_cli::{
    cmd_coverage, cmd_dimension, cmd_generate, cmd_predict, cmd_recalibrate, cmd_train, exit_code, Context,
    PredictTarget, RecalibrateArgs, TrainArgs,
};
use tactile_core::dimensioning::Variant;
use tactile_core::train::TrainConfig;

#[derive(Parser)]
#[command(name = "tactile", version, about = "Multi-camera optical tactile sensor study")]
struct Cli {
    /// Study config file; built-in desk-scale defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainFlags {
    /// Dataset written by `generate`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().max_epochs)]
    max_epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().patience)]
    patience: usize,
}

impl TrainFlags {
    fn to_args(&self, cameras: Option<Vec<usize>>) -> TrainArgs {
        TrainArgs {
            dataset: self.dataset.clone(),
            cameras,
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            patience: self.patience,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the indentation grid into a dataset.
    Generate,
    /// Train a model from scratch.
    Train {
        #[command(flatten)]
        flags: TrainFlags,
        /// Use only these cameras, e.g. `0,1,2`.
        #[arg(long, value_delimiter = ',')]
        cameras: Option<Vec<usize>>,
    },
    /// Grow a trained model onto more cameras and retrain its last layers.
    Recalibrate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,1.0")]
        fractions: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Predict the force distribution of one indentation or dataset sample.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Indentation centre and depth in mm: `x,y,depth`.
        #[arg(long, value_parser = parse_point, conflicts_with = "sample")]
        at: Option<[f64; 3]>,
        /// Dataset sample id; needs `--dataset`.
        #[arg(long, requires = "dataset")]
        sample: Option<u64>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Sensor stack thickness per design variant.
    Dimension {
        /// One of as-built, relocated-connector, relocated-board, ideal-minimal.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Camera field-of-view coverage of the surface.
    Coverage,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected x,y,depth, got {} values", v.len()))
}

fn run(cli: Cli) -> tactile_core::Result<String> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| tactile_core::Error::Validation(format!("thread pool: {e}")))?;
    }
    let ctx = Context::new(cli.config.as_deref(), cli.seed, cli.out)?;
    match cli.command {
        Command::Generate => cmd_generate(&ctx),
        Command::Train { flags, cameras } => cmd_train(&ctx, &flags.to_args(cameras)),
        Command::Recalibrate {
            model,
            flags,
            fractions,
            seeds,
        } => cmd_recalibrate(
            &ctx,
            &RecalibrateArgs {
                model,
                train: flags.to_args(None),
                fractions,
                seeds,
            },
        ),
        Command::Predict {
            model,
            at,
            sample,
            dataset,
        } => {
            let target = match (at, sample, dataset) {
                (Some(p), None, _) => PredictTarget::Indentation(p),
                (None, Some(id), Some(dataset)) => PredictTarget::Sample { dataset, id },
                _ => {
                    return Err(tactile_core::Error::Validation(
                        "give either --at x,y,depth or --sample ID --dataset PATH".into(),
                    ))
                }
            };
            cmd_predict(&ctx, &model, &target)
        }
        Command::Dimension { variant } => {
            let variant = variant.map(|v| v.parse::<Variant>()).transpose()?;
            cmd_dimension(&ctx, variant)
        }
        Command::Coverage => cmd_coverage(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
