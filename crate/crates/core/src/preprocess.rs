//! High-pass derivative preprocessing.
//!
//! Each color channel of the noisy image is filtered with four fixed 3x3
//! derivative stencils. The responses are stacked behind the channel itself,
//! giving a `(channel, plane, y, x)` tensor with planes ordered
//! `(identity, D_yy, D_y, D_x, D_xx)`.
//!
//! Stencils are applied as correlations with zero padding, so output size
//! equals input size.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type Stencil = [[f64; 3]; 3];

/// Second derivative along y.
pub const D_YY: Stencil = [[0.0, 0.5, 0.0], [0.0, -1.0, 0.0], [0.0, 0.5, 0.0]];
/// Forward difference along y.
pub const D_Y: Stencil = [[0.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 1.0, 0.0]];
/// Forward difference along x.
pub const D_X: Stencil = [[0.0, 0.0, 0.0], [0.0, -1.0, 1.0], [0.0, 0.0, 0.0]];
/// Second derivative along x.
pub const D_XX: Stencil = [[0.0, 0.0, 0.0], [0.5, -1.0, 0.5], [0.0, 0.0, 0.0]];
/// Mixed derivative, the forward differences along x and y composed.
pub const D_XY: Stencil = [[0.0, 0.0, 0.0], [0.0, 1.0, -1.0], [0.0, -1.0, 1.0]];
pub const IDENTITY: Stencil = [[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];

/// The four preprocessing filters, in plane order.
pub struct HighPassBank;

impl HighPassBank {
    pub const KERNELS: [Stencil; 4] = [D_YY, D_Y, D_X, D_XX];
    pub const NAMES: [&'static str; 4] = ["D_yy", "D_y", "D_x", "D_xx"];

    pub fn kernel_tensor<T: Scalar>(index: usize) -> Tensor<T> {
        stencil_tensor(&Self::KERNELS[index])
    }
}

/// Discrete derivative stencil for multi-index `(order in x, order in y)`.
/// Supports total order up to 2.
pub fn derivative_stencil(alpha: (u8, u8)) -> Option<Stencil> {
    match alpha {
        (0, 0) => Some(IDENTITY),
        (1, 0) => Some(D_X),
        (0, 1) => Some(D_Y),
        (2, 0) => Some(D_XX),
        (0, 2) => Some(D_YY),
        (1, 1) => Some(D_XY),
        _ => None,
    }
}

pub fn stencil_tensor<T: Scalar>(stencil: &Stencil) -> Tensor<T> {
    Tensor::from_fn(&[3, 3], |i| T::of(stencil[i[0]][i[1]])).expect("3x3 stencil")
}

/// Same-size zero-padded correlation of an `h x w` plane with a 3x3 stencil,
/// accumulated into `out` with weight `scale`.
pub(crate) fn stencil_same<T: Scalar>(plane: &[T], h: usize, w: usize, stencil: &Stencil, scale: T, out: &mut [T]) {
    for (dy, row) in stencil.iter().enumerate() {
        for (dx, &k) in row.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let k = T::of(k) * scale;
            for y in 0..h {
                let sy = y as isize + dy as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                let dst = &mut out[y * w..(y + 1) * w];
                let x_lo = if dx == 0 { 1 } else { 0 };
                let x_hi = if dx == 2 { w.saturating_sub(1) } else { w };
                for x in x_lo..x_hi {
                    dst[x] += k * src[x + dx - 1];
                }
            }
        }
    }
}

/// Adjoint of [`stencil_same`]: scatters `resp` back through the stencil.
pub(crate) fn stencil_same_adjoint<T: Scalar>(
    resp: &[T],
    h: usize,
    w: usize,
    stencil: &Stencil,
    scale: T,
    out: &mut [T],
) {
    for (dy, row) in stencil.iter().enumerate() {
        for (dx, &k) in row.iter().enumerate() {
            if k == 0.0 {
                continue;
            }
            let k = T::of(k) * scale;
            for y in 0..h {
                let sy = y as isize + dy as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let src = &resp[y * w..(y + 1) * w];
                let dst = &mut out[sy as usize * w..(sy as usize + 1) * w];
                let x_lo = if dx == 0 { 1 } else { 0 };
                let x_hi = if dx == 2 { w.saturating_sub(1) } else { w };
                for x in x_lo..x_hi {
                    dst[x + dx - 1] += k * src[x];
                }
            }
        }
    }
}

fn plane_dims<T: Scalar>(channel: &Tensor<T>) -> Result<(usize, usize)> {
    match channel.shape() {
        &[h, w] => Ok((h, w)),
        other => Err(Error::Dimension(format!("expected a rank-2 channel, got shape {other:?}"))),
    }
}

/// Filters one channel with the four high-pass kernels, in plane order
/// `(D_yy, D_y, D_x, D_xx)`.
pub fn apply_highpass_bank<T: Scalar>(channel: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
    let (h, w) = plane_dims(channel)?;
    let respond = |stencil: &Stencil| {
        let mut out = vec![T::zero(); h * w];
        stencil_same(channel.data(), h, w, stencil, T::one(), &mut out);
        Tensor::new(&[h, w], out)
    };
    let k = &HighPassBank::KERNELS;
    Ok([respond(&k[0])?, respond(&k[1])?, respond(&k[2])?, respond(&k[3])?])
}

/// Network input: shape `(3, 5, H, W)`, plane 0 the noisy channel and
/// planes 1..=4 its high-pass responses.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedInput<T = f32>(Tensor<T>);

impl<T: Scalar> PreprocessedInput<T> {
    pub const PLANES: usize = 5;

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// Builds the `(3, 5, H, W)` network input from a `(3, H, W)` image.
pub fn build_input<T: Scalar>(noisy_image: &Tensor<T>) -> Result<PreprocessedInput<T>> {
    let (h, w) = match noisy_image.shape() {
        &[3, h, w] => (h, w),
        other => {
            return Err(Error::Shape(format!("expected a (3, H, W) image, got shape {other:?}")));
        }
    };
    let plane = h * w;
    let mut data = Vec::with_capacity(3 * 5 * plane);
    for c in 0..3 {
        let channel = &noisy_image.data()[c * plane..(c + 1) * plane];
        data.extend_from_slice(channel);
        for stencil in &HighPassBank::KERNELS {
            let start = data.len();
            data.resize(start + plane, T::zero());
            stencil_same(channel, h, w, stencil, T::one(), &mut data[start..]);
        }
    }
    Ok(PreprocessedInput(Tensor::new(&[3, 5, h, w], data)?))
}
