//! Patch unrolling for strided, zero-padded n-d convolution.
//!
//! `im2col` lays out every kernel-sized patch of a `(channels, spatial...)`
//! input as one column of a `(channels * kernel_volume) x output_volume`
//! matrix. The convolution then reduces to one matrix product per layer.
//! `col2im` is its exact adjoint (scatter-add).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{advance, strides_of};

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub input: Vec<usize>,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub pad_before: Vec<usize>,
    pub output: Vec<usize>,
}

/// Output positions `[lo, hi)` along one axis whose source index
/// `o * stride + k - pad` lies inside `[0, extent)`.
fn valid_range(k: usize, pad: usize, stride: usize, extent: usize, out: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if extent + pad <= k { 0 } else { ((extent + pad - k - 1) / stride + 1).min(out) };
    (lo.min(hi), hi)
}

impl Geometry {
    pub fn new(
        channels: usize,
        input: &[usize],
        kernel: &[usize],
        stride: &[usize],
        pad_before: &[usize],
        pad_after: &[usize],
    ) -> Result<Self> {
        let d = input.len();
        if kernel.len() != d || stride.len() != d || pad_before.len() != d || pad_after.len() != d {
            return Err(Error::Dimension(format!(
                "convolution geometry: {d} spatial axes but kernel {kernel:?}, stride {stride:?}"
            )));
        }
        let mut output = Vec::with_capacity(d);
        for a in 0..d {
            let padded = input[a] + pad_before[a] + pad_after[a];
            if stride[a] == 0 || kernel[a] == 0 || kernel[a] > padded {
                return Err(Error::Dimension(format!(
                    "kernel extent {} does not fit padded extent {padded} (stride {}) on spatial axis {a}",
                    kernel[a], stride[a]
                )));
            }
            output.push((padded - kernel[a]) / stride[a] + 1);
        }
        Ok(Self {
            channels,
            input: input.to_vec(),
            kernel: kernel.to_vec(),
            stride: stride.to_vec(),
            pad_before: pad_before.to_vec(),
            output,
        })
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn output_volume(&self) -> usize {
        self.output.iter().product()
    }

    pub fn input_volume(&self) -> usize {
        self.input.iter().product()
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel_volume()
    }

    /// Visits every contiguous run shared by the input and the column
    /// matrix: `f(row, col_start, in_start, len, in_step)`. Runs that fall
    /// into the zero padding are reported with `in_start = None`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, Option<usize>, usize, usize)) {
        let d = self.input.len();
        let last = d - 1;
        let in_strides = strides_of(&self.input);
        let out_last = self.output[last];
        let lead_out = &self.output[..last];
        let in_volume = self.input_volume();
        let mut row = 0;
        for c in 0..self.channels {
            let mut kidx = vec![0; d];
            loop {
                let (lo, hi) = valid_range(
                    kidx[last],
                    self.pad_before[last],
                    self.stride[last],
                    self.input[last],
                    out_last,
                );
                let mut oidx = vec![0; last];
                let mut lead_flat = 0;
                loop {
                    let mut base = Some(c * in_volume);
                    for a in 0..last {
                        let i = (oidx[a] * self.stride[a] + kidx[a]) as isize - self.pad_before[a] as isize;
                        if i < 0 || i >= self.input[a] as isize {
                            base = None;
                            break;
                        }
                        base = base.map(|b| b + i as usize * in_strides[a]);
                    }
                    let col = lead_flat * out_last;
                    match base {
                        Some(b) if hi > lo => {
                            if lo > 0 {
                                f(row, col, None, lo, 0);
                            }
                            let start = lo * self.stride[last] + kidx[last] - self.pad_before[last];
                            f(row, col + lo, Some(b + start), hi - lo, self.stride[last]);
                            if hi < out_last {
                                f(row, col + hi, None, out_last - hi, 0);
                            }
                        }
                        _ => f(row, col, None, out_last, 0),
                    }
                    lead_flat += 1;
                    if !advance(&mut oidx, lead_out) {
                        break;
                    }
                }
                row += 1;
                if !advance(&mut kidx, &self.kernel) {
                    break;
                }
            }
        }
    }

    /// Fills `cols` (`rows() x output_volume()`, row-major) from `input`.
    pub fn im2col<T: Scalar>(&self, input: &[T], cols: &mut [T]) {
        debug_assert_eq!(input.len(), self.channels * self.input_volume());
        let p = self.output_volume();
        debug_assert_eq!(cols.len(), self.rows() * p);
        self.for_each_run(|row, col, src, len, step| {
            let dst = &mut cols[row * p + col..row * p + col + len];
            match src {
                None => dst.fill(T::zero()),
                Some(s) if step == 1 => dst.copy_from_slice(&input[s..s + len]),
                Some(s) => {
                    for (j, v) in dst.iter_mut().enumerate() {
                        *v = input[s + j * step];
                    }
                }
            }
        });
    }

    /// Scatter-adds `cols` into `input` (adjoint of [`Self::im2col`]).
    pub fn col2im<T: Scalar>(&self, cols: &[T], input: &mut [T]) {
        debug_assert_eq!(input.len(), self.channels * self.input_volume());
        let p = self.output_volume();
        self.for_each_run(|row, col, src, len, step| {
            if let Some(s) = src {
                let from = &cols[row * p + col..row * p + col + len];
                if step == 1 {
                    for (dst, &v) in input[s..s + len].iter_mut().zip(from) {
                        *dst += v;
                    }
                } else {
                    for (j, &v) in from.iter().enumerate() {
                        input[s + j * step] += v;
                    }
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_im2col(g: &Geometry, input: &[f64]) -> Vec<f64> {
        let d = g.input.len();
        let p = g.output_volume();
        let mut cols = vec![0.0; g.rows() * p];
        let in_strides = strides_of(&g.input);
        for c in 0..g.channels {
            for kf in 0..g.kernel_volume() {
                let mut kidx = vec![0; d];
                let mut rem = kf;
                for a in (0..d).rev() {
                    kidx[a] = rem % g.kernel[a];
                    rem /= g.kernel[a];
                }
                for of in 0..p {
                    let mut oidx = vec![0; d];
                    let mut rem = of;
                    for a in (0..d).rev() {
                        oidx[a] = rem % g.output[a];
                        rem /= g.output[a];
                    }
                    let mut off = c * g.input_volume();
                    let mut inside = true;
                    for a in 0..d {
                        let i = (oidx[a] * g.stride[a] + kidx[a]) as isize - g.pad_before[a] as isize;
                        if i < 0 || i >= g.input[a] as isize {
                            inside = false;
                        } else {
                            off += i as usize * in_strides[a];
                        }
                    }
                    if inside {
                        cols[(c * g.kernel_volume() + kf) * p + of] = input[off];
                    }
                }
            }
        }
        cols
    }

    #[test]
    fn im2col_matches_naive_and_col2im_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let d = rng.random_range(1..=3);
            let channels = rng.random_range(1..=3);
            let input: Vec<usize> = (0..d).map(|_| rng.random_range(1..=6)).collect();
            let kernel: Vec<usize> = input.iter().map(|&e| rng.random_range(1..=e.min(4))).collect();
            let stride: Vec<usize> = (0..d).map(|_| rng.random_range(1..=3)).collect();
            let pb: Vec<usize> = (0..d).map(|_| rng.random_range(0..=2)).collect();
            let pa: Vec<usize> = (0..d).map(|_| rng.random_range(0..=2)).collect();
            let g = Geometry::new(channels, &input, &kernel, &stride, &pb, &pa).unwrap();
            let n = channels * g.input_volume();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut cols = vec![f64::NAN; g.rows() * g.output_volume()];
            g.im2col(&x, &mut cols);
            assert_eq!(cols, naive_im2col(&g, &x));

            let y: Vec<f64> = (0..cols.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut back = vec![0.0; n];
            g.col2im(&y, &mut back);
            let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_kernel_larger_than_padded_input() {
        assert!(Geometry::new(1, &[3], &[5], &[1], &[0], &[1]).is_err());
        assert!(Geometry::new(1, &[3], &[5], &[1], &[1], &[1]).is_ok());
    }
}
