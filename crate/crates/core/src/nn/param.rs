use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named learnable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        Self { name: name.into(), value, grad }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Result<Self> {
        Ok(Self::new(name, Tensor::zeros(shape)?))
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(T::zero());
    }

    /// Replaces the value, keeping the shape.
    pub fn assign(&mut self, value: Tensor<T>) -> Result<()> {
        self.value.expect_same_shape(&value, &self.name)?;
        self.value = value;
        Ok(())
    }
}

/// Stable 64-bit FNV-1a hash, used to derive per-parameter seeds.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic RNG for one named parameter under a global seed.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()))
}

/// Fills `param` with `uniform(-s, s)`, `s = sqrt(1 / fan_in)`.
pub fn init_uniform_fan_in<T: Scalar>(param: &mut Param<T>, fan_in: usize, seed: u64) {
    let s = (1.0 / fan_in.max(1) as f64).sqrt();
    let mut rng = param_rng(seed, &param.name);
    for v in param.value.data_mut() {
        *v = T::of(rng.random_range(-s..s));
    }
    param.zero_grad();
}

/// Checks that parameter names are unique.
pub fn ensure_unique_names<'a, T: Scalar + 'a>(params: impl IntoIterator<Item = &'a Param<T>>) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for p in params {
        if !seen.insert(p.name.as_str()) {
            return Err(Error::Config(format!("duplicate parameter name {:?}", p.name)));
        }
    }
    Ok(())
}
