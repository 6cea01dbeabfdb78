//! Two-stage color image denoising.
//!
//! The noisy image is expanded with four high-pass derivative responses per
//! channel, passed through parallel 5-layer residual CNN branches whose
//! residuals are blended and added back to the input, and optionally refined
//! by a deeper classification-style second stage trained with a
//! mixed-partial-derivative loss.

pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod objective;
pub mod preprocess;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use data::{ImageBuffer, NoiseMode, NoiseSpec, TrainConfig};
pub use error::{Error, Result};
pub use model::{Arch, ModelConfig, Stage2Preset, TrainStage, TwoStageModel};
pub use nn::Checkpoint;
pub use objective::{mixed_derivative_loss, psnr, psnr_loss, ssim, MetricReport, MixedDerivativeLossConfig};
pub use preprocess::{build_input, PreprocessedInput};
pub use scalar::Scalar;
pub use tensor::{contract, conv_nd, crop, pad, rotate90, PadMode, PadSpec, Tensor};
