//! Dense n-rank tensors.
//!
//! A [`Tensor`] is a row-major array with an immutable shape. Convolution is
//! expressed as a contraction between a kernel and the patch sliced from the
//! input at each output position, using the correlation convention (the
//! kernel is not flipped):
//!
//! ```text
//! out[o] = sum_k input[o * stride + k] * kernel[k]
//! ```
//!
//! All reductions run in a fixed order (nested loops, last axis innermost),
//! so results are bit-reproducible.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor. Every extent is positive; a rank-0 tensor holds
/// one element.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview = &self.data[..self.data.len().min(8)];
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .field("len", &self.data.len())
            .finish()
    }
}

/// Row-major strides for `shape`.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::Dimension(format!(
            "extent of axis {axis} is zero in shape {shape:?}"
        )));
    }
    Ok(shape.iter().product())
}

/// Advances a row-major multi-index. Returns `false` once it wraps around.
#[inline]
pub(crate) fn advance(index: &mut [usize], shape: &[usize]) -> bool {
    for axis in (0..index.len()).rev() {
        index[axis] += 1;
        if index[axis] < shape[axis] {
            return true;
        }
        index[axis] = 0;
    }
    false
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let count = check_shape(shape)?;
        if count != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {count} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let count = check_shape(shape)?;
        Ok(Self { shape: shape.to_vec(), data: vec![value; count] })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let count = check_shape(shape)?;
        let mut data = Vec::with_capacity(count);
        let mut index = vec![0; shape.len()];
        loop {
            data.push(f(&index));
            if !advance(&mut index, shape) {
                break;
            }
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Same-shape tensor of zeros.
    pub fn zeros_like(&self) -> Self {
        Self { shape: self.shape.clone(), data: vec![T::zero(); self.data.len()] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable element access. The shape stays fixed.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.rank() {
            return Err(Error::Dimension(format!(
                "index of rank {} into tensor of rank {}",
                index.len(),
                self.rank()
            )));
        }
        let mut offset = 0;
        for (axis, (&i, &e)) in index.iter().zip(&self.shape).enumerate() {
            if i >= e {
                return Err(Error::Dimension(format!(
                    "index {i} out of range for axis {axis} of extent {e}"
                )));
            }
            offset = offset * e + i;
        }
        Ok(offset)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let offset = self.offset(index)?;
        self.data[offset] = value;
        Ok(())
    }

    /// New tensor with the same element sequence and a different shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn expect_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|x| x * factor)
    }

    /// In-place `self += factor * other`.
    pub fn axpy(&mut self, factor: T, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sum of elementwise products (Frobenius inner product).
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|x| x.max(lo).min(hi))
    }

    /// Element type conversion (lossy when narrowing).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.to_f64_lossy())).collect(),
        }
    }

    /// Sub-tensor at `index` along axis 0.
    pub fn slice0(&self, index: usize) -> Result<Self> {
        if self.rank() == 0 || index >= self.shape[0] {
            return Err(Error::Dimension(format!(
                "slice {index} along axis 0 of shape {:?}",
                self.shape
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        Ok(Self {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Dimension("stack of zero tensors".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            first.expect_same_shape(item, "stack")?;
            data.extend_from_slice(&item.data);
        }
        Ok(Self { shape, data })
    }
}

/// Boundary handling for [`pad`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PadMode {
    #[default]
    Zero,
    /// Mirror about the edge element without repeating it: `[1,2,3]` padded
    /// by one becomes `[2,1,2,3,2]`.
    Reflect,
}

/// Padding of one convolved axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct PadSpec {
    pub before: usize,
    pub after: usize,
    pub mode: PadMode,
}

impl PadSpec {
    pub const NONE: PadSpec = PadSpec { before: 0, after: 0, mode: PadMode::Zero };

    pub fn zero(before: usize, after: usize) -> Self {
        Self { before, after, mode: PadMode::Zero }
    }

    /// Zero padding that keeps an odd kernel extent's output the input size.
    pub fn same(kernel_extent: usize) -> Self {
        let total = kernel_extent - 1;
        Self::zero(total / 2, total - total / 2)
    }
}

fn check_axis(rank: usize, axis: usize, what: &str) -> Result<()> {
    if axis >= rank {
        return Err(Error::Dimension(format!("{what}: axis {axis} out of range for rank {rank}")));
    }
    Ok(())
}

/// Pads one axis. Interior elements are unchanged.
pub fn pad<T: Scalar>(
    input: &Tensor<T>,
    axis: usize,
    before: usize,
    after: usize,
    mode: PadMode,
) -> Result<Tensor<T>> {
    check_axis(input.rank(), axis, "pad")?;
    let extent = input.shape[axis];
    if before == 0 && after == 0 {
        return Ok(input.clone());
    }
    if mode == PadMode::Reflect {
        if extent < 2 {
            return Err(Error::UnsupportedMode(format!(
                "reflect padding needs extent >= 2 on axis {axis}, got {extent}"
            )));
        }
        if before > extent - 1 || after > extent - 1 {
            return Err(Error::UnsupportedMode(format!(
                "reflect padding of {before}/{after} exceeds extent {extent} - 1 on axis {axis}"
            )));
        }
    }
    let outer: usize = input.shape[..axis].iter().product();
    let inner: usize = input.shape[axis + 1..].iter().product();
    let new_extent = extent + before + after;
    let mut data = Vec::with_capacity(outer * new_extent * inner);
    for o in 0..outer {
        let block = &input.data[o * extent * inner..(o + 1) * extent * inner];
        for j in 0..new_extent {
            let source = j as isize - before as isize;
            let source = match mode {
                PadMode::Zero if source < 0 || source >= extent as isize => None,
                PadMode::Zero => Some(source as usize),
                PadMode::Reflect => {
                    let last = extent as isize - 1;
                    let mirrored = if source < 0 {
                        -source
                    } else if source > last {
                        2 * last - source
                    } else {
                        source
                    };
                    Some(mirrored as usize)
                }
            };
            match source {
                Some(s) => data.extend_from_slice(&block[s * inner..(s + 1) * inner]),
                None => data.extend(std::iter::repeat_n(T::zero(), inner)),
            }
        }
    }
    let mut shape = input.shape.clone();
    shape[axis] = new_extent;
    Tensor::new(&shape, data)
}

/// Keeps `len` elements of `axis` starting at `start`.
pub fn crop<T: Scalar>(input: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    check_axis(input.rank(), axis, "crop")?;
    let extent = input.shape[axis];
    if len == 0 || start + len > extent {
        return Err(Error::Dimension(format!(
            "crop [{start}, {}) outside axis {axis} of extent {extent}",
            start + len
        )));
    }
    let outer: usize = input.shape[..axis].iter().product();
    let inner: usize = input.shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        data.extend_from_slice(&input.data[base..base + len * inner]);
    }
    let mut shape = input.shape.clone();
    shape[axis] = len;
    Tensor::new(&shape, data)
}

/// Contracts `a` with `b` over the given `(axis of a, axis of b)` pairs.
///
/// The result has the unpaired axes of `a` followed by the unpaired axes of
/// `b`. Pairing every axis yields a rank-0 tensor.
pub fn contract<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, paired_axes: &[(usize, usize)]) -> Result<Tensor<T>> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(ia, ib) in paired_axes {
        check_axis(a.rank(), ia, "contract (left)")?;
        check_axis(b.rank(), ib, "contract (right)")?;
        if used_a[ia] || used_b[ib] {
            return Err(Error::Dimension(format!("contract: axis pair ({ia}, {ib}) reuses an axis")));
        }
        if a.shape[ia] != b.shape[ib] {
            return Err(Error::Dimension(format!(
                "contract: axis {ia} of left (extent {}) does not match axis {ib} of right (extent {})",
                a.shape[ia], b.shape[ib]
            )));
        }
        used_a[ia] = true;
        used_b[ib] = true;
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&i| !used_b[i]).collect();
    let sa = a.strides();
    let sb = b.strides();

    let out_shape: Vec<usize> = free_a
        .iter()
        .map(|&i| a.shape[i])
        .chain(free_b.iter().map(|&i| b.shape[i]))
        .collect();
    let sum_shape: Vec<usize> = paired_axes.iter().map(|&(ia, _)| a.shape[ia]).collect();

    // Offsets of every summation index, in row-major order over the pairs.
    let mut sum_offsets = Vec::new();
    let mut idx = vec![0; sum_shape.len()];
    loop {
        let (mut oa, mut ob) = (0, 0);
        for (p, &(ia, ib)) in paired_axes.iter().enumerate() {
            oa += idx[p] * sa[ia];
            ob += idx[p] * sb[ib];
        }
        sum_offsets.push((oa, ob));
        if !advance(&mut idx, &sum_shape) {
            break;
        }
    }

    let mut out_idx = vec![0; out_shape.len()];
    let mut data = Vec::with_capacity(out_shape.iter().product());
    loop {
        let (mut base_a, mut base_b) = (0, 0);
        for (p, &axis) in free_a.iter().enumerate() {
            base_a += out_idx[p] * sa[axis];
        }
        for (p, &axis) in free_b.iter().enumerate() {
            base_b += out_idx[free_a.len() + p] * sb[axis];
        }
        let mut acc = T::zero();
        for &(oa, ob) in &sum_offsets {
            acc += a.data[base_a + oa] * b.data[base_b + ob];
        }
        data.push(acc);
        if !advance(&mut out_idx, &out_shape) {
            break;
        }
    }
    Tensor::new(&out_shape, data)
}

/// n-dimensional correlation of `input` with `kernel` over `spatial_axes`.
///
/// Axes not listed pass through: every slice along them is convolved
/// independently. `kernel` has one axis per convolved axis, in the order of
/// `spatial_axes`. Output extent per convolved axis is
/// `(padded - kernel) / stride + 1`.
pub fn conv_nd<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    spatial_axes: &[usize],
    padding: &[PadSpec],
    stride: &[usize],
) -> Result<Tensor<T>> {
    let d = spatial_axes.len();
    if kernel.rank() != d {
        return Err(Error::Dimension(format!(
            "conv_nd: kernel rank {} does not match {d} convolved axes",
            kernel.rank()
        )));
    }
    if padding.len() != d || stride.len() != d {
        return Err(Error::Dimension(format!(
            "conv_nd: need {d} padding and stride entries, got {} and {}",
            padding.len(),
            stride.len()
        )));
    }
    let mut seen = vec![false; input.rank()];
    for &axis in spatial_axes {
        check_axis(input.rank(), axis, "conv_nd")?;
        if seen[axis] {
            return Err(Error::Dimension(format!("conv_nd: axis {axis} listed twice")));
        }
        seen[axis] = true;
    }
    if let Some(p) = stride.iter().position(|&s| s == 0) {
        return Err(Error::Dimension(format!("conv_nd: stride of convolved axis {p} is zero")));
    }

    let mut padded = input.clone();
    for (p, &axis) in spatial_axes.iter().enumerate() {
        let spec = padding[p];
        padded = pad(&padded, axis, spec.before, spec.after, spec.mode)?;
    }

    let mut out_shape = padded.shape.clone();
    for (p, &axis) in spatial_axes.iter().enumerate() {
        let extent = padded.shape[axis];
        let k = kernel.shape[p];
        if k > extent {
            return Err(Error::Dimension(format!(
                "conv_nd: kernel extent {k} exceeds padded extent {extent} on axis {axis}"
            )));
        }
        out_shape[axis] = (extent - k) / stride[p] + 1;
    }

    let ps = padded.strides();
    let mut kernel_offsets = Vec::with_capacity(kernel.len());
    let mut kidx = vec![0; d];
    loop {
        kernel_offsets.push(
            spatial_axes.iter().enumerate().map(|(p, &axis)| kidx[p] * ps[axis]).sum::<usize>(),
        );
        if !advance(&mut kidx, &kernel.shape) {
            break;
        }
    }

    let mut step = vec![1; padded.rank()];
    for (p, &axis) in spatial_axes.iter().enumerate() {
        step[axis] = stride[p];
    }

    let mut out_idx = vec![0; out_shape.len()];
    let mut data = Vec::with_capacity(out_shape.iter().product());
    loop {
        let base: usize = out_idx.iter().zip(&step).zip(&ps).map(|((&i, &s), &st)| i * s * st).sum();
        let mut acc = T::zero();
        for (&off, &w) in kernel_offsets.iter().zip(&kernel.data) {
            acc += padded.data[base + off] * w;
        }
        data.push(acc);
        if !advance(&mut out_idx, &out_shape) {
            break;
        }
    }
    Tensor::new(&out_shape, data)
}

/// Rotates the last two axes (y, x) counterclockwise by `quarter_turns * 90`
/// degrees. Leading axes pass through.
pub fn rotate90<T: Scalar>(image: &Tensor<T>, quarter_turns: i32) -> Result<Tensor<T>> {
    let r = image.rank();
    if r < 2 {
        return Err(Error::Dimension(format!("rotate90 needs rank >= 2, got {r}")));
    }
    let turns = quarter_turns.rem_euclid(4);
    if turns == 0 {
        return Ok(image.clone());
    }
    let (h, w) = (image.shape[r - 2], image.shape[r - 1]);
    let outer = image.len() / (h * w);
    let (oh, ow) = if turns % 2 == 1 { (w, h) } else { (h, w) };
    let mut data = Vec::with_capacity(image.len());
    for o in 0..outer {
        let plane = &image.data[o * h * w..(o + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let (y, x) = match turns {
                    1 => (j, w - 1 - i),
                    2 => (h - 1 - i, w - 1 - j),
                    _ => (h - 1 - j, i),
                };
                data.push(plane[y * w + x]);
            }
        }
    }
    let mut shape = image.shape.clone();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn construction_checks_element_count() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::zeros(&[2, 0]).is_err());
        assert_eq!(Tensor::<f64>::scalar(3.0).len(), 1);
    }

    #[test]
    fn contract_full_pairing_gives_scalar() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let s = contract(&a, &id, &[(0, 0), (1, 1)]).unwrap();
        assert_eq!(s.shape(), &[] as &[usize]);
        assert_eq!(s.data(), &[5.0]);
    }

    #[test]
    fn contract_vectors_is_dot_product() {
        let a = t(&[3], &[1.0, 2.0, 3.0]);
        let b = t(&[3], &[4.0, 5.0, 6.0]);
        assert_eq!(contract(&a, &b, &[(0, 0)]).unwrap().data(), &[32.0]);
    }

    #[test]
    fn contract_with_identity_keeps_elements() {
        let a = Tensor::from_fn(&[2, 3, 4], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64).unwrap();
        let id = Tensor::from_fn(&[3, 3], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap();
        let c = contract(&a, &id, &[(1, 0)]).unwrap();
        // axis 1 moves to the end
        assert_eq!(c.shape(), &[2, 4, 3]);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(c.get(&[i, k, j]).unwrap(), a.get(&[i, j, k]).unwrap());
                }
            }
        }
    }

    #[test]
    fn contract_reports_mismatched_axes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 2], &[0.0; 4]);
        let err = contract(&a, &b, &[(1, 0)]).unwrap_err().to_string();
        assert!(err.contains("axis 1") && err.contains("axis 0"), "{err}");
        assert!(contract(&a, &b, &[(0, 0), (0, 1)]).is_err());
    }

    #[test]
    fn conv_examples() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let k = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = conv_nd(&x, &k, &[0, 1], &[PadSpec::NONE; 2], &[1, 1]).unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        assert_eq!(y.data(), &[5.0]);

        let c = Tensor::full(&[5, 6], 0.3).unwrap();
        let zero_sum = t(&[3, 3], &[0.0, 0.5, 0.0, 0.0, -1.0, 0.0, 0.0, 0.5, 0.0]);
        let y = conv_nd(&c, &zero_sum, &[0, 1], &[PadSpec::NONE; 2], &[1, 1]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[3, 4, 5], |i| (i[0] * 20 + i[1] * 5 + i[2]) as f64 * 0.1).unwrap();
        let k = Tensor::full(&[1, 1, 1], 1.0).unwrap();
        let y = conv_nd(&x, &k, &[0, 1, 2], &[PadSpec::NONE; 3], &[1, 1, 1]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_passes_through_unlisted_axes() {
        let x = Tensor::from_fn(&[2, 4], |i| (i[0] * 4 + i[1]) as f64).unwrap();
        let k = t(&[2], &[1.0, -1.0]);
        let y = conv_nd(&x, &k, &[1], &[PadSpec::NONE], &[1]).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert!(y.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn conv_stride_and_padding_extents() {
        let x = Tensor::full(&[7, 7], 1.0f64).unwrap();
        let k = Tensor::full(&[3, 3], 1.0).unwrap();
        let y = conv_nd(&x, &k, &[0, 1], &[PadSpec::zero(1, 1); 2], &[2, 2]).unwrap();
        assert_eq!(y.shape(), &[4, 4]);
        assert_eq!(y.get(&[0, 0]).unwrap(), 4.0);
        assert_eq!(y.get(&[1, 1]).unwrap(), 9.0);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let x = Tensor::full(&[2, 2], 1.0f64).unwrap();
        let k = Tensor::full(&[3, 3], 1.0).unwrap();
        assert!(matches!(
            conv_nd(&x, &k, &[0, 1], &[PadSpec::NONE; 2], &[1, 1]),
            Err(Error::Dimension(_))
        ));
        assert!(conv_nd(&x, &k, &[0, 1], &[PadSpec::zero(1, 0); 2], &[1, 1]).is_ok());
    }

    #[test]
    fn pad_examples() {
        let x = t(&[3], &[1.0, 2.0, 3.0]);
        assert_eq!(pad(&x, 0, 1, 1, PadMode::Zero).unwrap().data(), &[0.0, 1.0, 2.0, 3.0, 0.0]);
        assert_eq!(pad(&x, 0, 1, 1, PadMode::Reflect).unwrap().data(), &[2.0, 1.0, 2.0, 3.0, 2.0]);
        assert_eq!(pad(&x, 0, 0, 0, PadMode::Reflect).unwrap(), x);
        let single = t(&[1], &[1.0]);
        assert!(matches!(pad(&single, 0, 1, 1, PadMode::Reflect), Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn rotate_examples() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rotate90(&x, 0).unwrap(), x);
        assert_eq!(rotate90(&x, 1).unwrap().data(), &[2.0, 4.0, 1.0, 3.0]);
        let mut r = x.clone();
        for _ in 0..4 {
            r = rotate90(&r, 1).unwrap();
        }
        assert_eq!(r, x);
        assert_eq!(rotate90(&x, -1).unwrap(), rotate90(&x, 3).unwrap());
    }

    fn arb_tensor(max_rank: usize) -> impl Strategy<Value = Tensor<f64>> {
        prop::collection::vec(1usize..5, 1..=max_rank).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pad_then_crop_is_identity(x in arb_tensor(3), axis_seed in 0usize..3, before in 0usize..3, after in 0usize..3) {
            let axis = axis_seed % x.rank();
            let padded = pad(&x, axis, before, after, PadMode::Zero).unwrap();
            let back = crop(&padded, axis, before, x.shape()[axis]).unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn rotation_inverse(x in arb_tensor(4), k in 0i32..4) {
            prop_assume!(x.rank() >= 2);
            let back = rotate90(&rotate90(&x, k).unwrap(), 4 - k).unwrap();
            prop_assert_eq!(back, x);
        }

        #[test]
        fn contraction_is_bilinear(
            a in prop::collection::vec(-1.0f64..1.0, 12),
            a2 in prop::collection::vec(-1.0f64..1.0, 12),
            b in prop::collection::vec(-1.0f64..1.0, 8),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
        ) {
            let a = t(&[3, 4], &a);
            let a2 = t(&[3, 4], &a2);
            let b = t(&[4, 2], &b);
            let mix = a.scale(alpha).add(&a2.scale(beta)).unwrap();
            let lhs = contract(&mix, &b, &[(1, 0)]).unwrap();
            let rhs = contract(&a, &b, &[(1, 0)]).unwrap().scale(alpha)
                .add(&contract(&a2, &b, &[(1, 0)]).unwrap().scale(beta)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
        }

        #[test]
        fn conv_is_linear_in_input_and_kernel(
            x in prop::collection::vec(-1.0f64..1.0, 30),
            x2 in prop::collection::vec(-1.0f64..1.0, 30),
            k in prop::collection::vec(-1.0f64..1.0, 6),
            k2 in prop::collection::vec(-1.0f64..1.0, 6),
            alpha in -2.0f64..2.0,
        ) {
            let (x, x2) = (t(&[5, 6], &x), t(&[5, 6], &x2));
            let (k, k2) = (t(&[2, 3], &k), t(&[2, 3], &k2));
            let pads = [PadSpec::zero(1, 0), PadSpec::zero(1, 1)];
            let conv = |x: &Tensor<f64>, k: &Tensor<f64>| conv_nd(x, k, &[0, 1], &pads, &[1, 2]).unwrap();
            let lhs = conv(&x.scale(alpha).add(&x2).unwrap(), &k);
            let rhs = conv(&x, &k).scale(alpha).add(&conv(&x2, &k)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
            let lhs = conv(&x, &k.scale(alpha).add(&k2).unwrap());
            let rhs = conv(&x, &k).scale(alpha).add(&conv(&x, &k2)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= 1e-12);
        }
    }
}
