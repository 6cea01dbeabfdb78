//! Fixtures shared by the benchmarks.

pub use tridenoise::{Arch, ModelConfig, NoiseSpec, Tensor, TrainConfig, TwoStageModel};

use tridenoise::data::synth_corpus;

/// One procedural `(3, size, size)` image.
pub fn image(size: usize, seed: u64) -> Tensor<f32> {
    synth_corpus(1, size, seed).expect("positive size").remove(0)
}

/// Desk-scale model of the given architecture.
pub fn model(arch: Arch, width: usize) -> TwoStageModel<f32> {
    TwoStageModel::new(ModelConfig { arch, width, ..ModelConfig::default() }, 1).expect("valid config")
}
