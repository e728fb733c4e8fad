//! The full generator: pose encoder, two warp paths (source and previous
//! frame) sharing one appearance encoder and one refiner, and the decoder.
//! Includes markovian rollout and the three-frame training step.

mod net;
mod rollout;
mod train;

pub use net::{FrameCache, FrameGenerator, GeneratorConfig, GeneratorNet, LinearGenerator};
pub use rollout::{rollout, GeneratedFrame, PrevFrame, PrevOrigin, Rollout};
pub use train::{sample_quadruple, TrainConfig, Trainer, TrainingQuadruple};
