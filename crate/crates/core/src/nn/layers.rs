//! Differentiable layers with hand-written backward passes.
//!
//! Layers process one sample at a time (no batch axis). `forward` caches
//! what `backward` needs; `backward` accumulates parameter gradients and
//! returns the gradient with respect to the layer input.

use crate::error::{Error, Result};
use crate::nn::geometry::Geometry;
use crate::nn::param::{init_uniform_fan_in, Param};
use crate::scalar::Scalar;
use crate::tensor::{PadMode, PadSpec, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

fn no_cache(name: &str) -> Error {
    Error::State(format!("layer {name}: backward called before forward"))
}

fn check_grad_shape<T: Scalar>(name: &str, grad: &Tensor<T>, expected: &[usize]) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::Dimension(format!(
            "layer {name}: upstream gradient shape {:?} does not match output shape {expected:?}",
            grad.shape()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    input: Tensor<T>,
    geometry: Geometry,
    output: Tensor<T>,
}

/// Convolution over `(in_channels, spatial...)` with a dense channel sum.
///
/// The weight has shape `(out_channels, in_channels, kernel...)`; the number
/// of kernel axes is the spatial rank (2 for image layers, 3 for the first
/// layer which also slides over the preprocessing planes).
#[derive(Clone, Debug)]
pub struct Conv<T = f32> {
    name: String,
    pub weight: Param<T>,
    pub bias: Param<T>,
    stride: Vec<usize>,
    padding: Vec<PadSpec>,
    activation: Activation,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv<T> {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: &[usize],
        stride: &[usize],
        padding: &[PadSpec],
        activation: Activation,
    ) -> Result<Self> {
        let name = name.into();
        if stride.len() != kernel.len() || padding.len() != kernel.len() {
            return Err(Error::Config(format!("layer {name}: kernel, stride and padding ranks differ")));
        }
        if padding.iter().any(|p| p.mode != PadMode::Zero) {
            return Err(Error::Config(format!("layer {name}: only zero padding is supported")));
        }
        let mut wshape = vec![out_channels, in_channels];
        wshape.extend_from_slice(kernel);
        Ok(Self {
            weight: Param::zeros(format!("{name}.weight"), &wshape)?,
            bias: Param::zeros(format!("{name}.bias"), &[out_channels])?,
            name,
            stride: stride.to_vec(),
            padding: padding.to_vec(),
            activation,
            cache: None,
        })
    }

    /// Square-kernel 2-D convolution with "same" zero padding and stride 1.
    pub fn same_2d(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        activation: Activation,
    ) -> Result<Self> {
        Self::new(
            name,
            in_channels,
            out_channels,
            &[kernel, kernel],
            &[1, 1],
            &[PadSpec::same(kernel); 2],
            activation,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> &[usize] {
        &self.weight.value.shape()[2..]
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.len() / self.out_channels()
    }

    pub fn init_params(&mut self, seed: u64) {
        let fan_in = self.fan_in();
        init_uniform_fan_in(&mut self.weight, fan_in, seed);
        self.bias.value.data_mut().fill(T::zero());
        self.bias.zero_grad();
    }

    fn geometry(&self, input: &Tensor<T>) -> Result<Geometry> {
        let d = self.kernel().len();
        let shape = input.shape();
        if shape.len() != d + 1 || shape[0] != self.in_channels() {
            return Err(Error::Dimension(format!(
                "layer {}: expected input ({}, {d} spatial axes), got shape {shape:?}",
                self.name,
                self.in_channels()
            )));
        }
        let pb: Vec<usize> = self.padding.iter().map(|p| p.before).collect();
        let pa: Vec<usize> = self.padding.iter().map(|p| p.after).collect();
        Geometry::new(self.in_channels(), &shape[1..], self.kernel(), &self.stride, &pb, &pa)
            .map_err(|e| Error::Dimension(format!("layer {}: {e}", self.name)))
    }

    fn compute(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Geometry)> {
        let g = self.geometry(input)?;
        let (k, p, co) = (g.rows(), g.output_volume(), self.out_channels());
        let mut out = Vec::with_capacity(co * p);
        for &b in self.bias.value.data() {
            out.extend(std::iter::repeat_n(b, p));
        }
        T::with_scratch(k * p, |cols| {
            g.im2col(input.data(), cols);
            T::gemm(co, k, p, T::one(), self.weight.value.data(), k, 1, cols, p, 1, T::one(), &mut out, p, 1);
        });
        if self.activation == Activation::Tanh {
            out.iter_mut().for_each(|v| *v = v.tanh());
        }
        let mut shape = vec![co];
        shape.extend_from_slice(&g.output);
        Ok((Tensor::new(&shape, out)?, g))
    }

    /// Forward pass without caching.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.compute(input)?.0)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (output, geometry) = self.compute(input)?;
        self.cache = Some(ConvCache { input: input.clone(), geometry, output: output.clone() });
        Ok(output)
    }

    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.backward_impl(grad_output, true)?.expect("input gradient requested"))
    }

    /// Accumulates parameter gradients without computing the input
    /// gradient.
    pub fn backward_params(&mut self, grad_output: &Tensor<T>) -> Result<()> {
        self.backward_impl(grad_output, false).map(drop)
    }

    /// For stride 1 with padding below the kernel extent, the input
    /// gradient is a convolution of the output gradient with the flipped,
    /// channel-swapped kernel. Returns that convolution's geometry.
    fn adjoint_geometry(&self, g: &Geometry) -> Option<Geometry> {
        let kernel = self.kernel();
        if self.stride.iter().any(|&s| s != 1) {
            return None;
        }
        if self.padding.iter().zip(kernel).any(|(p, &k)| p.before >= k || p.after >= k) {
            return None;
        }
        let pb: Vec<usize> = self.padding.iter().zip(kernel).map(|(p, &k)| k - 1 - p.before).collect();
        let pa: Vec<usize> = self.padding.iter().zip(kernel).map(|(p, &k)| k - 1 - p.after).collect();
        let ag = Geometry::new(self.out_channels(), &g.output, kernel, &self.stride, &pb, &pa).ok()?;
        debug_assert_eq!(ag.output, g.input);
        Some(ag)
    }

    fn backward_impl(&mut self, grad_output: &Tensor<T>, want_input: bool) -> Result<Option<Tensor<T>>> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache(&self.name))?;
        check_grad_shape(&self.name, grad_output, cache.output.shape())?;
        let g = &cache.geometry;
        let (k, p, co, ci) = (g.rows(), g.output_volume(), self.out_channels(), self.in_channels());

        let mut delta = grad_output.data().to_vec();
        if self.activation == Activation::Tanh {
            for (d, &y) in delta.iter_mut().zip(cache.output.data()) {
                *d *= T::one() - y * y;
            }
        }
        for (o, gb) in self.bias.grad.data_mut().iter_mut().enumerate() {
            *gb += delta[o * p..(o + 1) * p].iter().copied().sum::<T>();
        }

        let weight_grad = self.weight.grad.data_mut();
        T::with_scratch(k * p, |cols| {
            g.im2col(cache.input.data(), cols);
            // dW += delta (co x p) * cols^T (p x k)
            T::gemm(co, p, k, T::one(), &delta, p, 1, cols, 1, p, T::one(), weight_grad, k, 1);
        });
        if !want_input {
            return Ok(None);
        }

        let mut grad_input = cache.input.zeros_like();
        let w = self.weight.value.data();
        match self.adjoint_geometry(g) {
            Some(ag) => {
                let kv = g.kernel_volume();
                let mut flipped = vec![T::zero(); w.len()];
                for o in 0..co {
                    for c in 0..ci {
                        let src = &w[(o * ci + c) * kv..(o * ci + c + 1) * kv];
                        let dst = &mut flipped[(c * co + o) * kv..(c * co + o + 1) * kv];
                        for (d, &v) in dst.iter_mut().zip(src.iter().rev()) {
                            *d = v;
                        }
                    }
                }
                let (ka, pa) = (ag.rows(), ag.output_volume());
                T::with_scratch(ka * pa, |cols| {
                    ag.im2col(&delta, cols);
                    T::gemm(ci, ka, pa, T::one(), &flipped, ka, 1, cols, pa, 1, T::zero(), grad_input.data_mut(), pa, 1);
                });
            }
            None => T::with_scratch(k * p, |cols| {
                // dcols = W^T (k x co) * delta (co x p), scattered back
                T::gemm(k, co, p, T::one(), w, 1, k, &delta, p, 1, T::zero(), cols, p, 1);
                g.col2im(cols, grad_input.data_mut());
            }),
        }
        Ok(Some(grad_input))
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug)]
struct TransposedCache<T> {
    input: Tensor<T>,
    geometry: Geometry,
    output_shape: Vec<usize>,
}

/// Transposed ("de-") convolution that upsamples every spatial axis by its
/// stride.
///
/// Weight shape is `(in_channels, out_channels, kernel...)`. The full
/// transposed output `(n - 1) * stride + kernel` is cropped by
/// `(kernel - stride) / 2` at the start and kept to `stride * n` elements,
/// so this layer is the exact adjoint of a [`Conv`] with the same weight
/// tensor, stride, and zero padding `((k - s) / 2, k - s - (k - s) / 2)`.
#[derive(Clone, Debug)]
pub struct TransposedConv<T = f32> {
    name: String,
    pub weight: Param<T>,
    pub bias: Param<T>,
    stride: Vec<usize>,
    cache: Option<TransposedCache<T>>,
}

impl<T: Scalar> TransposedConv<T> {
    pub fn new(
        name: impl Into<String>,
        in_channels: usize,
        out_channels: usize,
        kernel: &[usize],
        stride: &[usize],
    ) -> Result<Self> {
        let name = name.into();
        if kernel.len() != stride.len() {
            return Err(Error::Config(format!("layer {name}: kernel and stride ranks differ")));
        }
        if kernel.iter().zip(stride).any(|(&k, &s)| s == 0 || k < s) {
            return Err(Error::Config(format!(
                "layer {name}: kernel {kernel:?} must be at least the stride {stride:?}"
            )));
        }
        let mut wshape = vec![in_channels, out_channels];
        wshape.extend_from_slice(kernel);
        Ok(Self {
            weight: Param::zeros(format!("{name}.weight"), &wshape)?,
            bias: Param::zeros(format!("{name}.bias"), &[out_channels])?,
            name,
            stride: stride.to_vec(),
            cache: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> &[usize] {
        &self.weight.value.shape()[2..]
    }

    pub fn stride(&self) -> &[usize] {
        &self.stride
    }

    /// Padding of the adjoint convolution, per spatial axis.
    pub fn adjoint_padding(&self) -> Vec<PadSpec> {
        self.kernel()
            .iter()
            .zip(&self.stride)
            .map(|(&k, &s)| {
                let before = (k - s) / 2;
                PadSpec::zero(before, k - s - before)
            })
            .collect()
    }

    pub fn init_params(&mut self, seed: u64) {
        let fan_in = self.weight.value.len() / self.out_channels();
        init_uniform_fan_in(&mut self.weight, fan_in, seed);
        self.bias.value.data_mut().fill(T::zero());
        self.bias.zero_grad();
    }

    fn geometry(&self, input: &Tensor<T>) -> Result<Geometry> {
        let d = self.kernel().len();
        let shape = input.shape();
        if shape.len() != d + 1 || shape[0] != self.in_channels() {
            return Err(Error::Dimension(format!(
                "layer {}: expected input ({}, {d} spatial axes), got shape {shape:?}",
                self.name,
                self.in_channels()
            )));
        }
        let big: Vec<usize> = shape[1..].iter().zip(&self.stride).map(|(&n, &s)| n * s).collect();
        let pads = self.adjoint_padding();
        let pb: Vec<usize> = pads.iter().map(|p| p.before).collect();
        let pa: Vec<usize> = pads.iter().map(|p| p.after).collect();
        let g = Geometry::new(self.out_channels(), &big, self.kernel(), &self.stride, &pb, &pa)?;
        debug_assert_eq!(g.output, shape[1..]);
        Ok(g)
    }

    fn compute(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Geometry)> {
        let g = self.geometry(input)?;
        let (k, p, ci, co) = (g.rows(), g.output_volume(), self.in_channels(), self.out_channels());
        // cols (k x p) = W^T (k x ci) * x (ci x p)
        let mut cols = vec![T::zero(); k * p];
        T::gemm(k, ci, p, T::one(), self.weight.value.data(), 1, k, input.data(), p, 1, T::zero(), &mut cols, p, 1);
        let big = g.input_volume();
        let mut out = Vec::with_capacity(co * big);
        for &b in self.bias.value.data() {
            out.extend(std::iter::repeat_n(b, big));
        }
        g.col2im(&cols, &mut out);
        let mut shape = vec![co];
        shape.extend_from_slice(&g.input);
        Ok((Tensor::new(&shape, out)?, g))
    }

    /// Forward pass without caching.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.compute(input)?.0)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (output, geometry) = self.compute(input)?;
        let output_shape = output.shape().to_vec();
        self.cache = Some(TransposedCache { input: input.clone(), geometry, output_shape });
        Ok(output)
    }

    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache(&self.name))?;
        check_grad_shape(&self.name, grad_output, &cache.output_shape)?;
        let g = &cache.geometry;
        let (k, p, ci) = (g.rows(), g.output_volume(), self.in_channels());
        let big = g.input_volume();
        for (o, gb) in self.bias.grad.data_mut().iter_mut().enumerate() {
            *gb += grad_output.data()[o * big..(o + 1) * big].iter().copied().sum::<T>();
        }
        let mut dcols = vec![T::zero(); k * p];
        g.im2col(grad_output.data(), &mut dcols);
        // dW (ci x k) += x (ci x p) * dcols^T (p x k)
        T::gemm(ci, p, k, T::one(), cache.input.data(), p, 1, &dcols, 1, p, T::one(), self.weight.grad.data_mut(), k, 1);
        // dx (ci x p) = W (ci x k) * dcols (k x p)
        let mut grad_input = cache.input.zeros_like();
        T::gemm(ci, k, p, T::one(), self.weight.value.data(), k, 1, &dcols, p, 1, T::zero(), grad_input.data_mut(), p, 1);
        Ok(grad_input)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug)]
struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
    output_shape: Vec<usize>,
}

/// 2-D max pooling over `(channels, H, W)`.
///
/// Output extent per axis is `ceil((n - window) / stride) + 1` (or 1 when
/// `n <= window`); windows running past the border are clipped. Backward
/// routes each gradient to the first maximum in scan order.
#[derive(Clone, Debug)]
pub struct MaxPool {
    name: String,
    window: [usize; 2],
    stride: [usize; 2],
    cache: Option<PoolCache>,
}

impl MaxPool {
    pub fn new(name: impl Into<String>, window: [usize; 2], stride: [usize; 2]) -> Result<Self> {
        let name = name.into();
        if window.contains(&0) || stride.contains(&0) {
            return Err(Error::Config(format!("layer {name}: zero window or stride")));
        }
        Ok(Self { name, window, stride, cache: None })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn output_extent(&self, axis: usize, n: usize) -> usize {
        let (k, s) = (self.window[axis], self.stride[axis]);
        if n <= k {
            1
        } else {
            (n - k).div_ceil(s) + 1
        }
    }

    fn compute<T: Scalar>(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        let (c, h, w) = match *input.shape() {
            [c, h, w] => (c, h, w),
            _ => {
                return Err(Error::Dimension(format!(
                    "layer {}: expected (C, H, W) input, got {:?}",
                    self.name,
                    input.shape()
                )))
            }
        };
        let (oh, ow) = (self.output_extent(0, h), self.output_extent(1, w));
        let x = input.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                let y0 = oy * self.stride[0];
                let y1 = (y0 + self.window[0]).min(h);
                for ox in 0..ow {
                    let x0 = ox * self.stride[1];
                    let x1 = (x0 + self.window[1]).min(w);
                    let mut best = ch * h * w + y0 * w + x0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            let i = ch * h * w + y * w + xx;
                            if x[i] > x[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        Ok((Tensor::new(&[c, oh, ow], out)?, argmax))
    }

    /// Forward pass without caching.
    pub fn infer<T: Scalar>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.compute(input)?.0)
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (output, argmax) = self.compute(input)?;
        let output_shape = output.shape().to_vec();
        self.cache = Some(PoolCache { input_shape: input.shape().to_vec(), argmax, output_shape });
        Ok(output)
    }

    pub fn backward<T: Scalar>(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.as_ref().ok_or_else(|| no_cache(&self.name))?;
        check_grad_shape(&self.name, grad_output, &cache.output_shape)?;
        let mut grad = Tensor::zeros(&cache.input_shape)?;
        let g = grad.data_mut();
        for (&i, &d) in cache.argmax.iter().zip(grad_output.data()) {
            g[i] += d;
        }
        Ok(grad)
    }
}

/// Elementwise hyperbolic tangent.
#[derive(Clone, Debug)]
pub struct Tanh<T = f32> {
    name: String,
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Tanh<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), output: None }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(input.map(T::tanh))
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let y = input.map(T::tanh);
        self.output = Some(y.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.as_ref().ok_or_else(|| no_cache(&self.name))?;
        check_grad_shape(&self.name, grad_output, y.shape())?;
        grad_output.zip_map(y, |g, y| g * (T::one() - y * y))
    }
}

/// Merges the two leading axes: `(a, b, rest...) -> (a * b, rest...)`.
#[derive(Clone, Debug)]
pub struct Flatten {
    name: String,
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), input_shape: None }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn flat_shape(&self, s: &[usize]) -> Result<Vec<usize>> {
        if s.len() < 2 {
            return Err(Error::Dimension(format!("layer {}: rank {} input", self.name, s.len())));
        }
        let mut shape = vec![s[0] * s[1]];
        shape.extend_from_slice(&s[2..]);
        Ok(shape)
    }

    pub fn infer<T: Scalar>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        input.reshape(&self.flat_shape(input.shape())?)
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.input_shape = Some(input.shape().to_vec());
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input_shape.as_ref().ok_or_else(|| no_cache(&self.name))?;
        grad_output.reshape(shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{apply_highpass_bank, D_X};
    use crate::tensor::conv_nd;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn check_layer(layer: impl Into<crate::nn::Layer<f64>>, input_shape: &[usize], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stack = crate::nn::LayerStack::new(vec![layer.into()]);
        for p in stack.params_mut() {
            p.value = random(p.value.shape(), &mut rng).scale(0.5);
        }
        let x = random(input_shape, &mut rng);
        let out_shape = stack.infer(&x).unwrap().shape().to_vec();
        let target = random(&out_shape, &mut rng);
        let report =
            crate::nn::gradient_check(&mut stack, |o| crate::nn::gradcheck::squared_error(o, &target), &x, 1e-4)
                .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let same = Conv::same_2d("same", 2, 3, 3, Activation::Tanh).unwrap();
        check_layer(same, &[2, 6, 5], 1);
        let strided = Conv::new("strided", 2, 2, &[3, 2], &[2, 1], &[PadSpec::zero(1, 0), PadSpec::zero(0, 1)], Activation::Tanh)
            .unwrap();
        check_layer(strided, &[2, 7, 6], 2);
        let wide_pad = Conv::new("wide", 1, 2, &[2, 2], &[1, 1], &[PadSpec::zero(2, 0), PadSpec::zero(0, 2)], Activation::Identity)
            .unwrap();
        check_layer(wide_pad, &[1, 4, 4], 3);
        let conv3d = Conv::new(
            "conv3d",
            3,
            2,
            &[3, 3, 3],
            &[1, 1, 1],
            &[PadSpec::NONE, PadSpec::same(3), PadSpec::same(3)],
            Activation::Tanh,
        )
        .unwrap();
        check_layer(conv3d, &[3, 5, 5, 4], 4);
        check_layer(TransposedConv::new("deconv", 2, 3, &[4, 4], &[2, 2]).unwrap(), &[2, 4, 3], 5);
        check_layer(MaxPool::new("pool", [3, 3], [2, 2]).unwrap(), &[2, 8, 7], 6);
        check_layer(Tanh::new("tanh"), &[2, 5, 5], 7);
        check_layer(Flatten::new("flat"), &[2, 3, 4, 4], 8);
    }

    #[test]
    fn backward_params_matches_full_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = Conv::<f64>::same_2d("c", 3, 4, 5, Activation::Tanh).unwrap();
        a.init_params(3);
        let mut b = a.clone();
        let x = random(&[3, 7, 6], &mut rng);
        let g = random(&[4, 7, 6], &mut rng);
        a.forward(&x).unwrap();
        b.forward(&x).unwrap();
        a.backward(&g).unwrap();
        b.backward_params(&g).unwrap();
        assert_eq!(a.weight.grad, b.weight.grad);
        assert_eq!(a.bias.grad, b.bias.grad);
    }

    #[test]
    fn zero_params_with_tanh_give_zero() {
        let mut conv = Conv::<f64>::same_2d("c", 2, 3, 3, Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = conv.forward(&random(&[2, 5, 5], &mut rng)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut conv = Conv::<f64>::same_2d("c", 1, 1, 1, Activation::Identity).unwrap();
        conv.weight.value.data_mut()[0] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 4, 6], &mut rng);
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn reproduces_preprocessing_stencil() {
        let mut conv = Conv::<f64>::same_2d("dx", 1, 1, 3, Activation::Identity).unwrap();
        for (i, v) in conv.weight.value.data_mut().iter_mut().enumerate() {
            *v = D_X[i / 3][i % 3];
        }
        let ramp = Tensor::from_fn(&[1, 6, 6], |i| i[2] as f64).unwrap();
        let y = conv.forward(&ramp).unwrap().into_reshape(&[6, 6]).unwrap();
        let [_, _, dx, _] = apply_highpass_bank(&ramp.reshape(&[6, 6]).unwrap()).unwrap();
        assert_eq!(y, dx);
    }

    #[test]
    fn channel_sum_is_a_contraction_over_the_channel_axis() {
        // a conv layer is conv_nd over (channel, spatial...) with a kernel
        // spanning all input channels, one output channel at a time
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut conv = Conv::<f64>::new(
            "c",
            3,
            2,
            &[2, 3, 3],
            &[1, 2, 1],
            &[PadSpec::zero(0, 1), PadSpec::zero(1, 1), PadSpec::zero(2, 0)],
            Activation::Identity,
        )
        .unwrap();
        conv.init_params(7);
        conv.bias.value.data_mut().copy_from_slice(&[0.25, -0.5]);
        let x = random(&[3, 4, 5, 6], &mut rng);
        let y = conv.forward(&x).unwrap();
        for o in 0..2 {
            let k = conv.weight.value.slice0(o).unwrap();
            let pads = [PadSpec::NONE, PadSpec::zero(0, 1), PadSpec::zero(1, 1), PadSpec::zero(2, 0)];
            let r = conv_nd(&x, &k, &[0, 1, 2, 3], &pads, &[1, 1, 2, 1]).unwrap();
            let r = r.map(|v| v + conv.bias.value.data()[o]);
            let got = y.slice0(o).unwrap();
            assert_eq!(r.shape()[1..], got.shape()[..]);
            let diff = r.into_reshape(got.shape()).unwrap().max_abs_diff(&got).unwrap();
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn backward_before_forward_is_a_state_error() {
        let mut conv = Conv::<f64>::same_2d("c", 1, 1, 3, Activation::Identity).unwrap();
        let g = Tensor::zeros(&[1, 3, 3]).unwrap();
        assert!(matches!(conv.backward(&g), Err(Error::State(_))));
        let mut pool = MaxPool::new("p", [2, 2], [2, 2]).unwrap();
        assert!(matches!(pool.backward(&g), Err(Error::State(_))));
        let mut t = Tanh::<f64>::new("t");
        assert!(matches!(t.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let mut conv = Conv::<f64>::same_2d("stage.conv9", 2, 1, 3, Activation::Identity).unwrap();
        let err = conv.forward(&Tensor::zeros(&[3, 4, 4]).unwrap()).unwrap_err().to_string();
        assert!(err.contains("stage.conv9"), "{err}");
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut conv = Conv::<f64>::same_2d("c", 2, 2, 3, Activation::Tanh).unwrap();
        conv.init_params(1);
        let y = conv.forward(&random(&[2, 5, 5], &mut rng)).unwrap();
        let gx = conv.backward(&y.zeros_like()).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(conv.weight.grad.data().iter().all(|&v| v == 0.0));
        assert!(conv.bias.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_tanh_chain_derivative() {
        // y = tanh(w x + b) with w = 0.5, b = 0, x = 1
        let mut conv = Conv::<f64>::same_2d("c", 1, 1, 1, Activation::Tanh).unwrap();
        conv.weight.value.data_mut()[0] = 0.5;
        let x = Tensor::full(&[1, 1, 1], 1.0).unwrap();
        conv.forward(&x).unwrap();
        conv.backward(&Tensor::full(&[1, 1, 1], 1.0).unwrap()).unwrap();
        let analytic = conv.weight.grad.data()[0];
        let h = 1e-6;
        let fd = ((0.5f64 + h).tanh() - (0.5f64 - h).tanh()) / (2.0 * h);
        assert!((analytic - fd).abs() < 1e-9);
        assert!((analytic - 0.786448).abs() < 1e-6);
    }

    #[test]
    fn transposed_conv_upsamples_by_stride() {
        let mut t = TransposedConv::<f64>::new("up", 3, 2, &[4, 4], &[2, 2]).unwrap();
        t.init_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (h, w) in [(3, 4), (5, 5), (1, 2)] {
            let y = t.forward(&random(&[3, h, w], &mut rng)).unwrap();
            assert_eq!(y.shape(), &[2, 2 * h, 2 * w]);
        }
        assert!(TransposedConv::<f64>::new("bad", 1, 1, &[1], &[2]).is_err());
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (k, s) in [(4usize, 2usize), (3, 2), (2, 2), (5, 3), (3, 1)] {
            let mut up = TransposedConv::<f64>::new("up", 2, 3, &[k, k], &[s, s]).unwrap();
            up.init_params(9);
            let mut down = Conv::<f64>::new(
                "down",
                3,
                2,
                &[k, k],
                &[s, s],
                &up.adjoint_padding(),
                Activation::Identity,
            )
            .unwrap();
            down.weight.value = up.weight.value.clone();
            let small = random(&[2, 4, 3], &mut rng);
            let big = random(&[3, 4 * s, 3 * s], &mut rng);
            let lhs = down.forward(&big).unwrap().dot(&small).unwrap();
            let rhs = big.dot(&up.forward(&small).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "k={k} s={s}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn max_pool_values_and_routing() {
        let x = Tensor::new(&[1, 3, 3], vec![1.0, 5.0, 2.0, 3.0, 4.0, 9.0, 7.0, 8.0, 6.0]).unwrap();
        let mut pool = MaxPool::new("p", [2, 2], [2, 2]).unwrap();
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[5.0, 9.0, 8.0, 6.0]);
        let g = pool.backward(&Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn max_pool_ties_go_to_first_in_scan_order() {
        let x = Tensor::full(&[1, 2, 2], 1.0f64).unwrap();
        let mut pool = MaxPool::new("p", [2, 2], [2, 2]).unwrap();
        pool.forward(&x).unwrap();
        let g = pool.backward(&Tensor::full(&[1, 1, 1], 1.0).unwrap()).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pool_extents_use_ceil_mode() {
        let p = MaxPool::new("p", [3, 3], [2, 2]).unwrap();
        assert_eq!(p.output_extent(0, 96), 48);
        assert_eq!(p.output_extent(0, 66), 33);
        assert_eq!(p.output_extent(0, 62), 31);
        let p = MaxPool::new("p", [2, 2], [2, 2]).unwrap();
        assert_eq!(p.output_extent(0, 66), 33);
        assert_eq!(p.output_extent(0, 1), 1);
    }

    #[test]
    fn tanh_bounds_and_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&[50], &mut rng).scale(5.0);
        let mut t = Tanh::new("t");
        let y = t.forward(&x).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1.0));
        let g = t.backward(&Tensor::full(&[50], 1.0).unwrap()).unwrap();
        for (gi, yi) in g.data().iter().zip(y.data()) {
            assert_eq!(*gi, 1.0 - yi * yi);
        }
    }
}
