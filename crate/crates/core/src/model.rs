//! The denoiser: a residual first stage of parallel branches and an optional
//! deeper refinement stage.
//!
//! ```text
//! Y --preprocess--> branch_i --> R_i
//! X_hat = sum_i w_i R_i + Y               (w = [lambda, 1 - lambda] for two branches)
//! out   = R2(X_hat) + X_hat               (when the second stage is present)
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Activation, Checkpoint, Conv, Flatten, Layer, LayerStack, MaxPool, Param, TransposedConv};
use crate::objective::{mixed_derivative_loss, psnr_loss, MixedDerivativeLossConfig};
use crate::preprocess::{build_input, PreprocessedInput};
use crate::scalar::Scalar;
use crate::tensor::{crop, pad, rotate90, PadMode, PadSpec, Tensor};

/// Second-stage layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage2Preset {
    AlexMini,
    VggMini,
}

/// Overall architecture: first stage alone or with a refinement stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Arch {
    Stage1Only,
    #[default]
    WithAlexMini,
    WithVggMini,
}

impl Arch {
    pub fn stage2(self) -> Option<Stage2Preset> {
        match self {
            Arch::Stage1Only => None,
            Arch::WithAlexMini => Some(Stage2Preset::AlexMini),
            Arch::WithVggMini => Some(Stage2Preset::VggMini),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Stage1Only => "3dr",
            Arch::WithAlexMini => "3dr+alexmini",
            Arch::WithVggMini => "3dr+vggmini",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3dr" => Ok(Arch::Stage1Only),
            "3dr+alexmini" => Ok(Arch::WithAlexMini),
            "3dr+vggmini" => Ok(Arch::WithVggMini),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?} (expected 3dr, 3dr+alexmini or 3dr+vggmini)"
            ))),
        }
    }
}

/// Model topology. Its [`Display`](fmt::Display) form is the canonical
/// string stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Number of first-stage branches, 1 to 3.
    pub branches: usize,
    /// Feature maps per hidden first-stage layer.
    pub width: usize,
    /// Weight of the first branch when there are two.
    pub lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { arch: Arch::default(), branches: 2, width: 32, lambda: 0.5 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.branches) {
            return Err(Error::Config(format!("branch count must be 1 to 3, got {}", self.branches)));
        }
        if self.width == 0 {
            return Err(Error::Config("width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }

    /// Residual weights per branch.
    pub fn branch_weights(&self) -> Vec<f64> {
        match self.branches {
            1 => vec![1.0],
            2 => vec![self.lambda, 1.0 - self.lambda],
            n => vec![1.0 / n as f64; n],
        }
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "arch={};branches={};width={};lambda={}", self.arch, self.branches, self.width, self.lambda)
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("model config {s:?}: {msg}"));
        let mut arch = None;
        let mut branches = None;
        let mut width = None;
        let mut lambda = None;
        for field in s.split(';') {
            let (key, value) = field.split_once('=').ok_or_else(|| bad(format!("malformed field {field:?}")))?;
            let num_err = |_| bad(format!("invalid {key} {value:?}"));
            match key {
                "arch" => arch = Some(value.parse()?),
                "branches" => branches = Some(value.parse().map_err(num_err)?),
                "width" => width = Some(value.parse().map_err(num_err)?),
                "lambda" => lambda = Some(value.parse().map_err(|_| bad(format!("invalid lambda {value:?}")))?),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| bad(format!("missing {k}"));
        let config = Self {
            arch: arch.ok_or_else(|| missing("arch"))?,
            branches: branches.ok_or_else(|| missing("branches"))?,
            width: width.ok_or_else(|| missing("width"))?,
            lambda: lambda.ok_or_else(|| missing("lambda"))?,
        };
        config.validate().map_err(|e| bad(e.to_string()))?;
        Ok(config)
    }
}

fn image_hw<T: Scalar>(image: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match *image.shape() {
        [3, h, w] => Ok((h, w)),
        ref other => Err(Error::Dimension(format!("{what}: expected a (3, H, W) image, got {other:?}"))),
    }
}

/// Output layers of both stages predict residuals in 8-bit intensity
/// units (the units noise levels are quoted in); this maps them to the
/// normalized `[0, 1]` range. Without it a single Adam step at the
/// first-stage learning rate moves the output by a sizeable fraction of the
/// image range.
pub const RESIDUAL_SCALE: f64 = 1.0 / 255.0;

/// One five-layer residual branch.
///
/// Layer 1 slides a `(3, 5, 5)` kernel over `(plane, y, x)` of the
/// `(3 colors, 5 planes, H, W)` input, with colors as input channels and no
/// padding along the plane axis, giving `(width, 3, H, W)`. That is
/// flattened to `3 * width` channels for the 2-D layers that follow.
#[derive(Clone, Debug)]
pub struct BranchNet<T = f32> {
    pub stack: LayerStack<T>,
}

impl<T: Scalar> BranchNet<T> {
    pub const KERNEL: usize = 5;
    pub const PLANE_DEPTH: usize = 3;

    pub fn new(index: usize, width: usize) -> Result<Self> {
        let k = Self::KERNEL;
        let p = format!("branch{index}");
        let mut stack = LayerStack::default();
        stack.push(Conv::new(
            format!("{p}.conv1"),
            3,
            width,
            &[Self::PLANE_DEPTH, k, k],
            &[1, 1, 1],
            &[PadSpec::NONE, PadSpec::same(k), PadSpec::same(k)],
            Activation::Tanh,
        )?);
        stack.push(Flatten::new(format!("{p}.flatten")));
        let planes_out = PreprocessedInput::<T>::PLANES - Self::PLANE_DEPTH + 1;
        stack.push(Conv::same_2d(format!("{p}.conv2"), planes_out * width, width, k, Activation::Tanh)?);
        stack.push(Conv::same_2d(format!("{p}.conv3"), width, width, k, Activation::Tanh)?);
        stack.push(Conv::same_2d(format!("{p}.conv4"), width, width, k, Activation::Tanh)?);
        stack.push(Conv::same_2d(format!("{p}.conv5"), width, 3, k, Activation::Identity)?);
        Ok(Self { stack })
    }

    /// Residual `(3, H, W)` for a preprocessed input.
    pub fn forward(&mut self, input: &PreprocessedInput<T>) -> Result<Tensor<T>> {
        Ok(self.stack.forward(input.tensor())?.scale(T::of(RESIDUAL_SCALE)))
    }

    pub fn infer(&self, input: &PreprocessedInput<T>) -> Result<Tensor<T>> {
        Ok(self.stack.infer(input.tensor())?.scale(T::of(RESIDUAL_SCALE)))
    }

    pub fn backward(&mut self, grad_residual: &Tensor<T>) -> Result<()> {
        self.stack.backward_params(&grad_residual.scale(T::of(RESIDUAL_SCALE)))
    }
}

/// Parallel branches whose residuals are blended and added to the input.
#[derive(Clone, Debug)]
pub struct Stage1Model<T = f32> {
    pub branches: Vec<BranchNet<T>>,
    weights: Vec<f64>,
}

impl<T: Scalar> Stage1Model<T> {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let branches = (0..config.branches).map(|i| BranchNet::new(i + 1, config.width)).collect::<Result<_>>()?;
        Ok(Self { branches, weights: config.branch_weights() })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_i w_i R_i + Y`.
    pub fn combine(&self, residuals: &[Tensor<T>], noisy: &Tensor<T>) -> Result<Tensor<T>> {
        if residuals.len() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "expected {} branch residuals, got {}",
                self.weights.len(),
                residuals.len()
            )));
        }
        let mut out = noisy.clone();
        for (r, &w) in residuals.iter().zip(&self.weights) {
            r.expect_same_shape(noisy, "stage 1 residual")?;
            out.axpy(T::of(w), r)?;
        }
        Ok(out)
    }

    pub fn residuals(&self, noisy: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        image_hw(noisy, "stage 1")?;
        let input = build_input(noisy)?;
        self.branches.iter().map(|b| b.infer(&input)).collect()
    }

    pub fn infer(&self, noisy: &Tensor<T>) -> Result<Tensor<T>> {
        self.combine(&self.residuals(noisy)?, noisy)
    }

    /// As [`infer`](Self::infer), caching activations for `backward`.
    pub fn forward(&mut self, noisy: &Tensor<T>) -> Result<Tensor<T>> {
        image_hw(noisy, "stage 1")?;
        let input = build_input(noisy)?;
        let residuals = self.branches.iter_mut().map(|b| b.forward(&input)).collect::<Result<Vec<_>>>()?;
        self.combine(&residuals, noisy)
    }

    /// Accumulates parameter gradients from the gradient at `X_hat`.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        for (b, &w) in self.branches.iter_mut().zip(&self.weights) {
            b.backward(&grad.scale(T::of(w)))?;
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.branches.iter().flat_map(|b| b.stack.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.branches.iter_mut().flat_map(|b| b.stack.params_mut()).collect()
    }

    fn clear_cache(&mut self) {
        self.branches.iter_mut().for_each(|b| b.stack.clear_cache());
    }
}

/// Refinement stage: upsample by two, convolve, pool back down, and predict
/// a residual on `X_hat`.
#[derive(Clone, Debug)]
pub struct Stage2Model<T = f32> {
    pub preset: Stage2Preset,
    pub stack: LayerStack<T>,
}

impl<T: Scalar> Stage2Model<T> {
    pub fn new(preset: Stage2Preset) -> Result<Self> {
        let mut s = LayerStack::default();
        let tanh = Activation::Tanh;
        s.push(TransposedConv::new("stage2.deconv", 3, 3, &[4, 4], &[2, 2])?);
        match preset {
            Stage2Preset::AlexMini => {
                s.push(Conv::same_2d("stage2.conv1", 3, 16, 7, tanh)?);
                s.push(MaxPool::new("stage2.pool", [3, 3], [2, 2])?);
                s.push(Conv::same_2d("stage2.conv2", 16, 32, 5, tanh)?);
                s.push(Conv::same_2d("stage2.conv3", 32, 32, 3, tanh)?);
                s.push(Conv::same_2d("stage2.conv4", 32, 32, 3, tanh)?);
                s.push(Conv::same_2d("stage2.conv5", 32, 32, 3, tanh)?);
                s.push(Conv::same_2d("stage2.out", 32, 3, 3, Activation::Identity)?);
            }
            Stage2Preset::VggMini => {
                s.push(Conv::same_2d("stage2.conv1", 3, 16, 3, tanh)?);
                s.push(Conv::same_2d("stage2.conv2", 16, 16, 3, tanh)?);
                s.push(MaxPool::new("stage2.pool", [2, 2], [2, 2])?);
                s.push(Conv::same_2d("stage2.conv3", 16, 32, 3, tanh)?);
                s.push(Conv::same_2d("stage2.conv4", 32, 32, 3, tanh)?);
                s.push(Conv::same_2d("stage2.conv5", 32, 32, 3, tanh)?);
                s.push(Conv::same_2d("stage2.out", 32, 3, 3, Activation::Identity)?);
            }
        }
        Ok(Self { preset, stack: s })
    }

    /// Residual cropped to the input size.
    fn fit(raw: Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
        let (rh, rw) = (raw.shape()[1], raw.shape()[2]);
        if rh < h || rw < w {
            return Err(Error::Dimension(format!("stage 2 produced {rh}x{rw} for a {h}x{w} input")));
        }
        crop(&crop(&raw, 1, 0, h)?, 2, 0, w)
    }

    /// `R(X_hat) + X_hat`.
    pub fn infer(&self, x_hat: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = image_hw(x_hat, "stage 2")?;
        Self::fit(self.stack.infer(x_hat)?.scale(T::of(RESIDUAL_SCALE)), h, w)?.add(x_hat)
    }

    pub fn forward(&mut self, x_hat: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = image_hw(x_hat, "stage 2")?;
        Self::fit(self.stack.forward(x_hat)?.scale(T::of(RESIDUAL_SCALE)), h, w)?.add(x_hat)
    }

    /// Accumulates parameter gradients and returns the gradient at `X_hat`.
    pub fn backward(&mut self, grad: &Tensor<T>, raw_shape: &[usize]) -> Result<Tensor<T>> {
        let (h, w) = image_hw(grad, "stage 2 gradient")?;
        let g = pad(grad, 1, 0, raw_shape[1] - h, PadMode::Zero)?;
        let g = pad(&g, 2, 0, raw_shape[2] - w, PadMode::Zero)?.scale(T::of(RESIDUAL_SCALE));
        self.stack.backward(&g)?.add(grad)
    }

    /// Shape of the uncropped residual for an `h x w` input.
    pub fn raw_shape(&self, h: usize, w: usize) -> [usize; 3] {
        let mut hw = [h, w];
        for layer in &self.stack.layers {
            match layer {
                Layer::TransposedConv(t) => {
                    hw = [hw[0] * t.stride()[0], hw[1] * t.stride()[1]];
                }
                Layer::MaxPool(p) => hw = [p.output_extent(0, hw[0]), p.output_extent(1, hw[1])],
                _ => {}
            }
        }
        [3, hw[0], hw[1]]
    }
}

/// Which objective a training step optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStage {
    /// First stage, PSNR loss on `X_hat`.
    One,
    /// Second stage, mixed-derivative loss on `R(X_hat) + X_hat - X`.
    Two,
}

/// End-to-end denoiser.
#[derive(Clone, Debug)]
pub struct TwoStageModel<T = f32> {
    config: ModelConfig,
    pub stage1: Stage1Model<T>,
    pub stage2: Option<Stage2Model<T>>,
    /// Keep the first stage fixed while training the second.
    pub freeze_stage1: bool,
}

impl<T: Scalar> TwoStageModel<T> {
    /// All parameters zero: the model maps every image to itself.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        let stage1 = Stage1Model::new(&config)?;
        let stage2 = config.arch.stage2().map(Stage2Model::new).transpose()?;
        Ok(Self { config, stage1, stage2, freeze_stage1: true })
    }

    /// Uniform fan-in initialization. The second stage's output layer
    /// starts at zero so that adding the stage leaves the output unchanged.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeroed(config)?;
        for b in &mut m.stage1.branches {
            b.stack.init_params(seed);
        }
        if let Some(s2) = &mut m.stage2 {
            s2.stack.init_params(seed);
            let out = s2.stack.last_conv_mut().expect("stage 2 ends in a convolution");
            out.weight.value.data_mut().fill(T::zero());
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Keeps the first stage and replaces the second with a freshly
    /// initialized one for `arch` (or none).
    pub fn with_arch(mut self, arch: Arch, seed: u64) -> Result<Self> {
        let fresh = Self::new(ModelConfig { arch, ..self.config.clone() }, seed)?;
        self.config = fresh.config;
        self.stage2 = fresh.stage2;
        Ok(self)
    }

    /// `X_hat` for a noisy `(3, H, W)` image.
    pub fn stage1_forward(&self, noisy: &Tensor<T>) -> Result<Tensor<T>> {
        self.stage1.infer(noisy)
    }

    /// `R(X_hat) + X_hat`.
    pub fn stage2_forward(&self, x_hat: &Tensor<T>) -> Result<Tensor<T>> {
        self.stage2
            .as_ref()
            .ok_or_else(|| Error::Config(format!("architecture {} has no second stage", self.config.arch)))?
            .infer(x_hat)
    }

    /// Full pipeline. Values are not clamped.
    pub fn denoise(&self, noisy: &Tensor<T>) -> Result<Tensor<T>> {
        let x_hat = self.stage1_forward(noisy)?;
        match &self.stage2 {
            Some(s2) => s2.infer(&x_hat),
            None => Ok(x_hat),
        }
    }

    /// Mean of the outputs for the four quarter-turn rotations of the input,
    /// each rotated back.
    pub fn enhanced_denoise(&self, noisy: &Tensor<T>) -> Result<Tensor<T>> {
        image_hw(noisy, "enhanced_denoise")?;
        let mut outs = Vec::with_capacity(4);
        for k in 0..4 {
            let y = self.denoise(&rotate90(noisy, k)?)?;
            outs.push(rotate90(&y, -k)?);
        }
        let quarter = T::of(0.25);
        let first = outs[0].add(&outs[1])?;
        let second = outs[2].add(&outs[3])?;
        Ok(first.add(&second)?.scale(quarter))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.stage1.params();
        if let Some(s2) = &self.stage2 {
            p.extend(s2.stack.params());
        }
        p
    }

    /// Parameters updated when training `stage`.
    pub fn trainable_params_mut(&mut self, stage: TrainStage) -> Vec<&mut Param<T>> {
        match stage {
            TrainStage::One => self.stage1.params_mut(),
            TrainStage::Two => {
                let mut p = if self.freeze_stage1 { Vec::new() } else { self.stage1.params_mut() };
                if let Some(s2) = &mut self.stage2 {
                    p.extend(s2.stack.params_mut());
                }
                p
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.stage1.params_mut() {
            p.zero_grad();
        }
        if let Some(s2) = &mut self.stage2 {
            s2.stack.zero_grad();
        }
    }

    /// Drops cached activations.
    pub fn clear_cache(&mut self) {
        self.stage1.clear_cache();
        if let Some(s2) = &mut self.stage2 {
            s2.stack.clear_cache();
        }
    }

    /// Forward and backward pass on one `(noisy, clean)` pair. Gradients
    /// are added to the parameters' `grad`; returns the loss.
    pub fn accumulate_gradients(
        &mut self,
        stage: TrainStage,
        noisy: &Tensor<T>,
        clean: &Tensor<T>,
        loss: &MixedDerivativeLossConfig,
    ) -> Result<f64> {
        noisy.expect_same_shape(clean, "training pair")?;
        match stage {
            TrainStage::One => {
                let x_hat = self.stage1.forward(noisy)?;
                let (value, grad) = psnr_loss(&x_hat, clean)?;
                self.stage1.backward(&grad)?;
                Ok(value)
            }
            TrainStage::Two => {
                let frozen = self.freeze_stage1;
                let x_hat = if frozen { self.stage1.infer(noisy)? } else { self.stage1.forward(noisy)? };
                let arch = self.config.arch;
                let s2 = self
                    .stage2
                    .as_mut()
                    .ok_or_else(|| Error::Config(format!("architecture {arch} has no second stage")))?;
                let out = s2.forward(&x_hat)?;
                let (value, grad) = mixed_derivative_loss(&out.sub(clean)?, loss)?;
                let (h, w) = image_hw(&x_hat, "stage 2")?;
                let raw = s2.raw_shape(h, w);
                let grad_x_hat = s2.backward(&grad, &raw)?;
                if !frozen {
                    self.stage1.backward(&grad_x_hat)?;
                }
                Ok(value)
            }
        }
    }

    /// Parameters as a self-describing checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.to_string());
        for p in self.params() {
            ck.push(p.name.clone(), p.value.cast());
        }
        ck
    }

    /// Rebuilds a model from the topology and tensors in `ck`. Extra
    /// tensors (optimizer state) are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = ck.config.parse()?;
        let mut model = Self::zeroed(config)?;
        let cfg = ck.config.clone();
        let mut params = model.stage1.params_mut();
        if let Some(s2) = &mut model.stage2 {
            params.extend(s2.stack.params_mut());
        }
        for p in params {
            let t = ck
                .get(&p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint ({cfg}) has no tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint ({cfg}) tensor {} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.cast();
        }
        Ok(model)
    }
}
