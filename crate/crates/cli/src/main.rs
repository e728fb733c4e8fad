//! `dwnet`: synthetic data, warping, training, generation and evaluation.
//!
//! Exit codes: 0 success, 2 I/O, 3 invalid input, 4 configuration or
//! checkpoint mismatch (including unparsable command lines).

mod commands;
mod config;
mod export;
mod fail;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{EvaluateInput, GenerateInput, WarpArgs};
use config::{Dims, Overrides, Profile, RunConfig};
use fail::{CliResult, Failure};

#[derive(Parser, Debug)]
#[command(name = "dwnet", version, about = "Dense-correspondence warping and pose-guided video synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// `key=value` file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    #[arg(long)]
    seed: Option<u64>,
    /// Image size, `HxW` or a single side.
    #[arg(long)]
    dims: Option<Dims>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            profile: self.profile,
            seed: self.seed,
            dims: self.dims,
            ..Overrides::default()
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic scenes with ground-truth correspondences.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of scenes (default 8).
        #[arg(long)]
        scenes: Option<usize>,
        /// Driving frames per scene, besides the source (default 32, at least 2).
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write PNG copies of every frame.
        #[arg(long)]
        png: bool,
    },
    /// Warp a source image to a driving pose.
    Warp {
        #[arg(long)]
        source_iuv: PathBuf,
        #[arg(long)]
        driving_iuv: PathBuf,
        #[arg(long)]
        source_img: PathBuf,
        /// Generator checkpoint whose refiner corrects the coarse grid.
        #[arg(long, value_name = "CKPT")]
        refiner: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png: bool,
    },
    /// Train the generator on a directory of sequences.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Reconstruction weight (default 10).
        #[arg(long)]
        lambda: Option<f64>,
        /// Learning rate (default 0.0002).
        #[arg(long)]
        lr: Option<f64>,
        /// Training steps (default 1000); 0 writes the initialization.
        #[arg(long)]
        steps: Option<usize>,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out a trained generator over a pose sequence.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "CKPT")]
        checkpoint: PathBuf,
        /// Sequence directory: its source frame and driving poses.
        #[arg(long)]
        sequence: Option<PathBuf>,
        #[arg(long)]
        source_img: Option<PathBuf>,
        #[arg(long)]
        source_iuv: Option<PathBuf>,
        /// Driving pose files, in order.
        #[arg(long = "pose")]
        poses: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        png: bool,
    },
    /// Compare generated and reference frames, embeddings or keypoints.
    Evaluate {
        /// Generated frames (sequence directory or directory of .dwt images).
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
        /// `n x d` embedding tensor for FID.
        #[arg(long)]
        generated_embeddings: Option<PathBuf>,
        #[arg(long)]
        reference_embeddings: Option<PathBuf>,
        /// `F x K x 3` keypoint track for AKD.
        #[arg(long)]
        generated_keypoints: Option<PathBuf>,
        #[arg(long)]
        reference_keypoints: Option<PathBuf>,
        /// Seed of the fixed perceptual extractor.
        #[arg(long, default_value_t = 77)]
        extractor_seed: u64,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("DWNET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("DWNET_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth {
            common,
            scenes,
            frames,
            out,
            png,
        } => {
            let flags = Overrides {
                scenes,
                frames,
                ..common.overrides()
            };
            let run = RunConfig::resolve(common.config.as_deref(), flags)?;
            commands::synth(&run, &out, png)
        }
        Command::Warp {
            source_iuv,
            driving_iuv,
            source_img,
            refiner,
            out,
            png,
        } => commands::warp(&WarpArgs {
            source_iuv: &source_iuv,
            driving_iuv: &driving_iuv,
            source_img: &source_img,
            refiner: refiner.as_deref(),
            out: &out,
            png,
        }),
        Command::Train {
            common,
            data,
            lambda,
            lr,
            steps,
            out,
        } => {
            let flags = Overrides {
                lambda,
                lr,
                steps,
                ..common.overrides()
            };
            let run = RunConfig::resolve(common.config.as_deref(), flags)?;
            commands::train(&run, &data, &out)
        }
        Command::Generate {
            common,
            checkpoint,
            sequence,
            source_img,
            source_iuv,
            poses,
            out,
            png,
        } => {
            let explicit = match &common.config {
                Some(file) => common.overrides().over(Overrides::from_file(file)?),
                None => common.overrides(),
            };
            let input = GenerateInput {
                sequence,
                source_img,
                source_iuv,
                poses,
            };
            commands::generate(&explicit, &checkpoint, &input, &out, png)
        }
        Command::Evaluate {
            generated,
            reference,
            generated_embeddings,
            reference_embeddings,
            generated_keypoints,
            reference_keypoints,
            extractor_seed,
            out,
        } => commands::evaluate(&EvaluateInput {
            generated,
            reference,
            generated_embeddings,
            reference_embeddings,
            generated_keypoints,
            reference_keypoints,
            extractor_seed,
            out,
        })
        .map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { fail::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dwnet: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
