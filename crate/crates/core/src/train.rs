//! Minibatch training loops for both stages.
//!
//! Each step draws batch `k = optimizer.step_count()` from a seeded
//! [`MinibatchIter`], so a run restored from a checkpoint (parameters plus
//! optimizer state) continues with exactly the batches and updates it would
//! have seen uninterrupted.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::{MinibatchIter, NoiseSpec, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{TrainStage, TwoStageModel};
use crate::nn::{AdamConfig, AdamState, Checkpoint, Moments};
use crate::objective::{psnr, MixedDerivativeLossConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mixed into the seed of stage-2 batches so the two stages see different
/// samples.
const STAGE2_SEED_SALT: u64 = 0x5354_4147_4532;

/// Progress after one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainEvent {
    pub stage: TrainStage,
    /// Steps completed in this stage, starting at 1.
    pub iter: usize,
    /// Mean per-sample loss of the batch.
    pub loss: f64,
    /// Mean PSNR on the validation pairs, present on logging steps.
    pub val_psnr: Option<f64>,
    /// Noise level of each batch sample.
    pub sigmas: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOptions<T = f32> {
    /// Validation is run every `log_every` steps, on the first and on the
    /// last one.
    pub log_every: usize,
    /// `(noisy, clean)` pairs scored with [`psnr`].
    pub validation: Vec<(Tensor<T>, Tensor<T>)>,
    pub loss: MixedDerivativeLossConfig,
}

impl<T> Default for TrainOptions<T> {
    fn default() -> Self {
        Self { log_every: 100, validation: Vec::new(), loss: MixedDerivativeLossConfig::default() }
    }
}

/// Mean PSNR of the model output over `pairs`; `None` when empty.
pub fn validation_psnr<T: Scalar>(model: &TwoStageModel<T>, pairs: &[(Tensor<T>, Tensor<T>)]) -> Result<Option<f64>> {
    if pairs.is_empty() {
        return Ok(None);
    }
    let scores = pairs
        .par_iter()
        .map(|(noisy, clean)| psnr(&model.denoise(noisy)?, clean, 1.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

pub fn stage_learning_rate(config: &TrainConfig, stage: TrainStage) -> f64 {
    match stage {
        TrainStage::One => config.lr_stage1,
        TrainStage::Two => config.lr_stage2,
    }
}

pub fn stage_iterations(config: &TrainConfig, stage: TrainStage) -> usize {
    match stage {
        TrainStage::One => config.iters_stage1,
        TrainStage::Two => config.iters_stage2,
    }
}

fn stage_sampler<'a, T: Scalar>(
    corpus: &'a [Tensor<T>],
    config: &TrainConfig,
    noise: NoiseSpec,
    stage: TrainStage,
) -> Result<MinibatchIter<'a, T>> {
    let mut cfg = config.clone();
    if stage == TrainStage::Two {
        cfg.seed ^= STAGE2_SEED_SALT;
    }
    MinibatchIter::new(corpus, &cfg, noise)
}

/// One optimizer step on batch `index`. Per-sample gradients are computed
/// on independent copies of the model (in parallel) and summed in sample
/// order, so the result does not depend on the thread count. Nothing is
/// updated if the loss or a gradient is not finite.
pub fn train_step<T: Scalar>(
    model: &mut TwoStageModel<T>,
    optimizer: &mut AdamState<T>,
    sampler: &MinibatchIter<'_, T>,
    stage: TrainStage,
    index: u64,
    loss: &MixedDerivativeLossConfig,
) -> Result<(f64, Vec<f64>)> {
    let batch = sampler.batch_at(index)?;
    let n = batch.len();
    model.clear_cache();
    model.zero_grad();
    let template = &*model;
    let per_sample = (0..n)
        .into_par_iter()
        .map(|i| {
            let (noisy, clean) = batch.sample(i)?;
            let mut replica = template.clone();
            let value = replica.accumulate_gradients(stage, &noisy, &clean, loss)?;
            let grads: Vec<Tensor<T>> = replica.trainable_params_mut(stage).iter().map(|p| p.grad.clone()).collect();
            Ok((value, grads))
        })
        .collect::<Result<Vec<_>>>()?;

    let mean_loss = per_sample.iter().map(|(l, _)| l).sum::<f64>() / n as f64;
    if !mean_loss.is_finite() {
        return Err(Error::Numeric(format!("{stage:?} loss is {mean_loss} at step {}", index + 1)));
    }
    let scale = T::of(1.0 / n as f64);
    let mut params = model.trainable_params_mut(stage);
    for (_, grads) in &per_sample {
        for (p, g) in params.iter_mut().zip(grads) {
            p.grad.axpy(T::one(), g)?;
        }
    }
    for p in params.iter_mut() {
        p.grad = p.grad.scale(scale);
        if !p.grad.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {} at step {}", p.name, index + 1)));
        }
    }
    optimizer.step(&mut params)?;
    Ok((mean_loss, batch.sigmas))
}

/// Runs `stage` until the optimizer has taken the configured number of
/// steps. `on_event` sees the model after every step and may stop training
/// by returning an error.
pub fn train_stage<T: Scalar>(
    model: &mut TwoStageModel<T>,
    optimizer: &mut AdamState<T>,
    stage: TrainStage,
    corpus: &[Tensor<T>],
    config: &TrainConfig,
    noise: NoiseSpec,
    options: &TrainOptions<T>,
    mut on_event: impl FnMut(&TrainEvent, &TwoStageModel<T>, &AdamState<T>) -> Result<()>,
) -> Result<()> {
    if stage == TrainStage::Two && model.stage2.is_none() {
        return Err(Error::Config(format!("architecture {} has no second stage", model.config().arch)));
    }
    let total = stage_iterations(config, stage);
    if total == 0 {
        return Ok(());
    }
    let sampler = stage_sampler(corpus, config, noise, stage)?;
    let log_every = options.log_every.max(1);
    while (optimizer.step_count() as usize) < total {
        let index = optimizer.step_count();
        let (loss, sigmas) = train_step(model, optimizer, &sampler, stage, index, &options.loss)?;
        let iter = index as usize + 1;
        let val_psnr = if iter == 1 || iter % log_every == 0 || iter == total {
            validation_psnr(model, &options.validation)?
        } else {
            None
        };
        on_event(&TrainEvent { stage, iter, loss, val_psnr, sigmas }, model, optimizer)?;
    }
    Ok(())
}

/// Both stages in sequence with fresh optimizers.
pub fn train_two_stage<T: Scalar>(
    model: &mut TwoStageModel<T>,
    corpus: &[Tensor<T>],
    config: &TrainConfig,
    noise: NoiseSpec,
    options: &TrainOptions<T>,
    mut on_event: impl FnMut(&TrainEvent, &TwoStageModel<T>, &AdamState<T>) -> Result<()>,
) -> Result<()> {
    let mut opt1 = AdamState::new(AdamConfig::new(config.lr_stage1));
    train_stage(model, &mut opt1, TrainStage::One, corpus, config, noise, options, &mut on_event)?;
    if model.stage2.is_some() {
        let mut opt2 = AdamState::new(AdamConfig::new(config.lr_stage2));
        train_stage(model, &mut opt2, TrainStage::Two, corpus, config, noise, options, &mut on_event)?;
    }
    Ok(())
}

fn opt_prefix(stage: TrainStage) -> &'static str {
    match stage {
        TrainStage::One => "opt.stage1",
        TrainStage::Two => "opt.stage2",
    }
}

/// Appends the optimizer state of `stage` to a checkpoint.
pub fn save_optimizer<T: Scalar>(ck: &mut Checkpoint, stage: TrainStage, optimizer: &AdamState<T>) -> Result<()> {
    let prefix = opt_prefix(stage);
    let step = optimizer.step_count();
    // f32 holds every integer up to 2^24 exactly
    if step > 1 << 24 {
        return Err(Error::Format(format!("step count {step} too large to store")));
    }
    ck.push(format!("{prefix}.step"), Tensor::scalar(step as f32));
    for (name, m) in optimizer.all_moments() {
        ck.push(format!("{prefix}.m.{name}"), m.first.cast());
        ck.push(format!("{prefix}.v.{name}"), m.second.cast());
    }
    Ok(())
}

/// Restores the optimizer state of `stage`, if the checkpoint has one.
pub fn load_optimizer<T: Scalar>(ck: &Checkpoint, stage: TrainStage, config: AdamConfig) -> Result<Option<AdamState<T>>> {
    let prefix = opt_prefix(stage);
    let Some(step) = ck.get(&format!("{prefix}.step")) else {
        return Ok(None);
    };
    let step = step.data().first().copied().unwrap_or(-1.0);
    if step < 0.0 || step.fract() != 0.0 {
        return Err(Error::Format(format!("invalid optimizer step {step}")));
    }
    let first_prefix = format!("{prefix}.m.");
    let mut moments = BTreeMap::new();
    for (name, first) in &ck.tensors {
        let Some(param) = name.strip_prefix(&first_prefix) else { continue };
        let second = ck
            .get(&format!("{prefix}.v.{param}"))
            .ok_or_else(|| Error::Format(format!("optimizer state for {param} lacks second moment")))?;
        moments.insert(param.to_string(), Moments { first: first.cast(), second: second.cast() });
    }
    let mut state = AdamState::new(config);
    state.restore(step as u64, moments);
    Ok(Some(state))
}
