use crate::error::Result;
use crate::nn::layers::{Conv, Flatten, MaxPool, Tanh, TransposedConv};
use crate::nn::param::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One differentiable layer.
#[derive(Clone, Debug)]
pub enum Layer<T = f32> {
    Conv(Conv<T>),
    TransposedConv(TransposedConv<T>),
    MaxPool(MaxPool),
    Tanh(Tanh<T>),
    Flatten(Flatten),
}

impl<T: Scalar> Layer<T> {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv(l) => l.name(),
            Layer::TransposedConv(l) => l.name(),
            Layer::MaxPool(l) => l.name(),
            Layer::Tanh(l) => l.name(),
            Layer::Flatten(l) => l.name(),
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(input),
            Layer::TransposedConv(l) => l.forward(input),
            Layer::MaxPool(l) => l.forward(input),
            Layer::Tanh(l) => l.forward(input),
            Layer::Flatten(l) => l.forward(input),
        }
    }

    /// Forward pass that leaves the layer untouched.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.infer(input),
            Layer::TransposedConv(l) => l.infer(input),
            Layer::MaxPool(l) => l.infer(input),
            Layer::Tanh(l) => l.infer(input),
            Layer::Flatten(l) => l.infer(input),
        }
    }

    /// Drops cached activations of convolutions (the large ones).
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.clear_cache(),
            Layer::TransposedConv(l) => l.clear_cache(),
            _ => {}
        }
    }

    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(grad_output),
            Layer::TransposedConv(l) => l.backward(grad_output),
            Layer::MaxPool(l) => l.backward(grad_output),
            Layer::Tanh(l) => l.backward(grad_output),
            Layer::Flatten(l) => l.backward(grad_output),
        }
    }

    /// Parameter gradients only; the input gradient is not formed.
    pub fn backward_params(&mut self, grad_output: &Tensor<T>) -> Result<()> {
        match self {
            Layer::Conv(l) => l.backward_params(grad_output),
            Layer::TransposedConv(l) => l.backward(grad_output).map(drop),
            _ => Ok(()),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(l) => l.params().to_vec(),
            Layer::TransposedConv(l) => l.params().to_vec(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv(l) => l.params_mut().into_iter().collect(),
            Layer::TransposedConv(l) => l.params_mut().into_iter().collect(),
            _ => Vec::new(),
        }
    }

    /// Uniform fan-in weights, zero biases. Deterministic per seed.
    pub fn init_params(&mut self, seed: u64) {
        match self {
            Layer::Conv(l) => l.init_params(seed),
            Layer::TransposedConv(l) => l.init_params(seed),
            _ => {}
        }
    }
}

impl<T> From<Conv<T>> for Layer<T> {
    fn from(l: Conv<T>) -> Self {
        Layer::Conv(l)
    }
}

impl<T> From<TransposedConv<T>> for Layer<T> {
    fn from(l: TransposedConv<T>) -> Self {
        Layer::TransposedConv(l)
    }
}

impl<T> From<MaxPool> for Layer<T> {
    fn from(l: MaxPool) -> Self {
        Layer::MaxPool(l)
    }
}

impl<T> From<Tanh<T>> for Layer<T> {
    fn from(l: Tanh<T>) -> Self {
        Layer::Tanh(l)
    }
}

impl<T> From<Flatten> for Layer<T> {
    fn from(l: Flatten) -> Self {
        Layer::Flatten(l)
    }
}

/// Layers applied in order.
#[derive(Clone, Debug, Default)]
pub struct LayerStack<T = f32> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> LayerStack<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: impl Into<Layer<T>>) {
        self.layers.push(layer.into());
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_output.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// As [`backward`](Self::backward) when the input is data: the first
    /// layer only accumulates its parameter gradients.
    pub fn backward_params(&mut self, grad_output: &Tensor<T>) -> Result<()> {
        let Some((first, rest)) = self.layers.split_first_mut() else {
            return Ok(());
        };
        let mut g = grad_output.clone();
        for layer in rest.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        first.backward_params(&g)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn init_params(&mut self, seed: u64) {
        for layer in &mut self.layers {
            layer.init_params(seed);
        }
    }

    /// The last convolution, if any.
    pub fn last_conv_mut(&mut self) -> Option<&mut Conv<T>> {
        self.layers.iter_mut().rev().find_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
    }
}
