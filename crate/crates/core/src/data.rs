//! Images, noise, cropping, synthetic corpora, and minibatches.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{crop, pad, PadMode, Tensor};

/// 8-bit RGB image, interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl ImageBuffer {
    /// Loads a PNG or PPM (any color type is converted to 8-bit RGB).
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self { width: img.width() as usize, height: img.height() as usize, pixels: img.into_raw() })
    }

    /// Writes PNG, or PPM when the extension is `.ppm`/`.pnm`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let img = RgbImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::Shape("pixel buffer does not match dimensions".into()))?;
        let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ppm") | Some("pnm") => ImageFormat::Pnm,
            _ => ImageFormat::Png,
        };
        img.save_with_format(path, format)?;
        Ok(())
    }

    /// `(3, H, W)` tensor with values `byte / 255`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        let mut data = vec![T::zero(); 3 * plane];
        let scale = T::of(255.0);
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = T::of(px[c] as f64) / scale;
            }
        }
        Tensor::new(&[3, self.height, self.width], data).expect("image dimensions are positive")
    }

    /// Quantizes `round(255 * clamp(x, 0, 1))`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [3, h, w] => (h, w),
            ref other => return Err(Error::Shape(format!("expected a (3, H, W) image, got {other:?}"))),
        };
        let plane = h * w;
        let mut pixels = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                let v = t.data()[c * plane + i].to_f64_lossy();
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                pixels.push((255.0 * v).round() as u8);
            }
        }
        Ok(Self { width: w, height: h, pixels })
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png") | Some("ppm") | Some("pnm")
    )
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else if is_image(&p) {
            out.push(p);
        }
    }
    Ok(())
}

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Image files of a dataset directory: the paths listed in `manifest.txt`
/// when present, otherwise every PNG/PPM found recursively in alphabetical
/// order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = dir.join(MANIFEST_NAME);
    if manifest.is_file() {
        return Ok(fs::read_to_string(&manifest)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| dir.join(l))
            .collect());
    }
    let mut out = Vec::new();
    walk(dir, &mut out)?;
    Ok(out)
}

/// Loads every image of a dataset directory as normalized tensors.
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Vec<(PathBuf, Tensor<T>)>> {
    list_images(dir)?
        .into_iter()
        .map(|p| {
            let t = ImageBuffer::load(&p)?.to_tensor();
            Ok((p, t))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseMode {
    /// Constant standard deviation, in 8-bit units.
    Fixed(f64),
    /// Standard deviation drawn uniformly from `[min, max]` per sample.
    Blind { min: f64, max: f64 },
}

/// Additive white Gaussian noise. Sigma is in 8-bit units (25 means
/// `25 / 255` on normalized images).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    /// Clamp noisy values to `[0, 1]`.
    pub clip: bool,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn fixed(sigma: f64) -> Self {
        Self { mode: NoiseMode::Fixed(sigma), clip: false, seed: 0 }
    }

    pub fn blind(min: f64, max: f64) -> Self {
        Self { mode: NoiseMode::Blind { min, max }, clip: false, seed: 0 }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            NoiseMode::Fixed(s) if s > 0.0 && s.is_finite() => Ok(()),
            NoiseMode::Blind { min, max } if min > 0.0 && min <= max && max.is_finite() => Ok(()),
            other => Err(Error::Config(format!("invalid noise level {other:?}"))),
        }
    }

    /// Draws the standard deviation for one sample.
    pub fn draw_sigma(&self, rng: &mut impl Rng) -> f64 {
        match self.mode {
            NoiseMode::Fixed(s) => s,
            NoiseMode::Blind { min, max } if min == max => min,
            NoiseMode::Blind { min, max } => rng.random_range(min..max),
        }
    }
}

/// `noisy = clean + n`, `n ~ N(0, (sigma / 255)^2)` i.i.d. (ziggurat
/// sampling). Returns the noisy image and the sigma used.
pub fn add_gaussian_noise<T: Scalar>(clean: &Tensor<T>, spec: &NoiseSpec, rng: &mut impl Rng) -> Result<(Tensor<T>, f64)> {
    spec.validate()?;
    let sigma = spec.draw_sigma(rng);
    let std = sigma / 255.0;
    let data = clean
        .data()
        .iter()
        .map(|x| {
            let n: f64 = rng.sample(StandardNormal);
            let v = x.to_f64_lossy() + std * n;
            T::of(if spec.clip { v.clamp(0.0, 1.0) } else { v })
        })
        .collect();
    Ok((Tensor::new(clean.shape(), data)?, sigma))
}

/// Uniformly positioned `size x size` crop of a `(C, H, W)` image. Images
/// smaller than `size` are reflect-padded first.
pub fn random_crop<T: Scalar>(image: &Tensor<T>, size: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if size == 0 {
        return Err(Error::Config("crop size must be positive".into()));
    }
    if image.rank() != 3 {
        return Err(Error::Shape(format!("expected (C, H, W), got {:?}", image.shape())));
    }
    let mut img = image.clone();
    for axis in [1, 2] {
        while img.shape()[axis] < size {
            let extent = img.shape()[axis];
            let missing = size - extent;
            if extent < 2 {
                // a single row/column can only be repeated
                let mut shape = img.shape().to_vec();
                shape[axis] = size;
                let src = img;
                img = Tensor::from_fn(&shape, |i| {
                    let mut j = i.to_vec();
                    j[axis] = 0;
                    src.get(&j).expect("in range")
                })?;
                continue;
            }
            let grow = missing.min(2 * (extent - 1));
            let before = grow / 2;
            img = pad(&img, axis, before, grow - before, PadMode::Reflect)?;
        }
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let y0 = rng.random_range(0..=h - size);
    let x0 = rng.random_range(0..=w - size);
    crop(&crop(&img, 1, y0, size)?, 2, x0, size)
}

fn corpus_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Procedural RGB images with smooth gradients, sinusoids, soft blobs, and
/// hard-edged shapes. Deterministic per seed; values in `[0, 1]`.
pub fn synth_corpus(count: usize, size: usize, seed: u64) -> Result<Vec<Tensor<f32>>> {
    if count == 0 || size == 0 {
        return Err(Error::Config("synthetic corpus needs count and size >= 1".into()));
    }
    Ok((0..count).map(|i| synth_image(size, &mut corpus_rng(seed, i))).collect())
}

fn synth_image(size: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let s = size as f64;
    let mut img = vec![[0.0f64; 3]; size * size];

    let base: [[f64; 3]; 3] = std::array::from_fn(|_| {
        [rng.random_range(0.2..0.8), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)]
    });
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(1..=3))
        .map(|_| {
            let freq = rng.random_range(1.0..8.0) * std::f64::consts::TAU / s;
            let theta = rng.random_range(0.0..std::f64::consts::PI);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (freq * theta.cos(), freq * theta.sin(), phase, std::array::from_fn(|_| rng.random_range(-0.12..0.12)))
        })
        .collect();
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(1..=3))
        .map(|_| {
            (
                rng.random_range(0.0..s),
                rng.random_range(0.0..s),
                rng.random_range(s / 10.0..s / 3.0),
                std::array::from_fn(|_| rng.random_range(-0.3..0.3)),
            )
        })
        .collect();
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64, x as f64);
            let px = &mut img[y * size + x];
            for c in 0..3 {
                px[c] = base[c][0] + base[c][1] * fx / s + base[c][2] * fy / s;
                for (kx, ky, phase, amp) in &waves {
                    px[c] += amp[c] * (kx * fx + ky * fy + phase).sin();
                }
                for (by, bx, r, amp) in &blobs {
                    let d2 = (fy - by).powi(2) + (fx - bx).powi(2);
                    px[c] += amp[c] * (-d2 / (2.0 * r * r)).exp();
                }
            }
        }
    }

    for _ in 0..rng.random_range(1..=4) {
        let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let (cy, cx) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
        let extent = rng.random_range(s / 8.0..s / 2.5);
        match rng.random_range(0..3) {
            0 => {
                let (hy, hx) = (extent, rng.random_range(s / 8.0..s / 2.5));
                for y in 0..size {
                    for x in 0..size {
                        if (y as f64 - cy).abs() < hy / 2.0 && (x as f64 - cx).abs() < hx / 2.0 {
                            img[y * size + x] = color;
                        }
                    }
                }
            }
            1 => {
                for y in 0..size {
                    for x in 0..size {
                        if (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) < extent * extent / 4.0 {
                            img[y * size + x] = color;
                        }
                    }
                }
            }
            _ => {
                // half-plane through (cy, cx)
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let (ny, nx) = (theta.sin(), theta.cos());
                for y in 0..size {
                    for x in 0..size {
                        if (y as f64 - cy) * ny + (x as f64 - cx) * nx > 0.0 {
                            img[y * size + x] = color;
                        }
                    }
                }
            }
        }
    }

    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in img.iter().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c].clamp(0.0, 1.0) as f32;
        }
    }
    Tensor::new(&[3, size, size], data).expect("positive size")
}

/// Training schedule and sampling parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub crop: usize,
    pub batch: usize,
    pub iters_stage1: usize,
    pub iters_stage2: usize,
    pub lr_stage1: f64,
    pub lr_stage2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            crop: 180,
            batch: 10,
            iters_stage1: 200_000,
            iters_stage2: 90_000,
            lr_stage1: 0.005,
            lr_stage2: 0.001,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.batch == 0 {
            return Err(Error::Config("crop and batch size must be positive".into()));
        }
        if !(self.lr_stage1 > 0.0 && self.lr_stage2 > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// One training minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T = f32> {
    /// `(B, 3, crop, crop)`
    pub noisy: Tensor<T>,
    /// `(B, 3, crop, crop)`
    pub clean: Tensor<T>,
    pub sigmas: Vec<f64>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    /// `(noisy, clean)` of sample `i`.
    pub fn sample(&self, i: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        Ok((self.noisy.slice0(i)?, self.clean.slice0(i)?))
    }
}

/// Endless stream of minibatches: each sample picks a corpus image
/// uniformly, crops it, and adds noise. Batch `k` depends only on the seed
/// and `k`, so a stream can be resumed at any index.
#[derive(Clone, Debug)]
pub struct MinibatchIter<'a, T = f32> {
    corpus: &'a [Tensor<T>],
    batch: usize,
    crop: usize,
    noise: NoiseSpec,
    seed: u64,
    index: u64,
}

impl<'a, T: Scalar> MinibatchIter<'a, T> {
    pub fn new(corpus: &'a [Tensor<T>], config: &TrainConfig, noise: NoiseSpec) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        config.validate()?;
        noise.validate()?;
        Ok(Self { corpus, batch: config.batch, crop: config.crop, noise, seed: config.seed ^ noise.seed, index: 0 })
    }

    /// Continue from batch `index`.
    pub fn starting_at(mut self, index: u64) -> Self {
        self.index = index;
        self
    }

    pub fn batch_at(&self, index: u64) -> Result<Batch<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        let mut noisy = Vec::with_capacity(self.batch);
        let mut clean = Vec::with_capacity(self.batch);
        let mut sigmas = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            let pick = rng.random_range(0..self.corpus.len());
            let c = random_crop(&self.corpus[pick], self.crop, &mut rng)?;
            let (n, sigma) = add_gaussian_noise(&c, &self.noise, &mut rng)?;
            noisy.push(n);
            clean.push(c);
            sigmas.push(sigma);
        }
        Ok(Batch { noisy: Tensor::stack(&noisy)?, clean: Tensor::stack(&clean)?, sigmas })
    }
}

impl<T: Scalar> Iterator for MinibatchIter<'_, T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        let b = self.batch_at(self.index);
        self.index += 1;
        Some(b)
    }
}

/// Deterministic RNG for evaluation noise on image `index` at level `sigma`.
pub fn eval_noise_rng(seed: u64, sigma: f64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ sigma.to_bits().rotate_left(17));
    rng.set_stream(index as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::psnr;
    use crate::preprocess::apply_highpass_bank;

    #[test]
    fn tensor_byte_round_trip() {
        let pixels: Vec<u8> = (0..=255u8).cycle().take(3 * 7 * 5).collect();
        let img = ImageBuffer { width: 7, height: 5, pixels };
        let t = img.to_tensor::<f32>();
        assert_eq!(t.shape(), &[3, 5, 7]);
        assert_eq!(ImageBuffer::from_tensor(&t).unwrap(), img);
        assert_eq!(ImageBuffer::from_tensor(&img.to_tensor::<f64>()).unwrap(), img);
    }

    #[test]
    fn png_and_ppm_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..3 * 9 * 4).map(|i| (i * 37 % 256) as u8).collect();
        let img = ImageBuffer { width: 9, height: 4, pixels };
        for name in ["a.png", "b.ppm"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            let back = ImageBuffer::load(&p).unwrap();
            assert_eq!(back, img);
            back.save(&p).unwrap();
            assert_eq!(ImageBuffer::load(&p).unwrap(), img);
        }
    }

    #[test]
    fn dataset_listing_is_recursive_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer { width: 2, height: 2, pixels: vec![9; 12] };
        fs::create_dir(dir.path().join("sub")).unwrap();
        img.save(&dir.path().join("sub/c.png")).unwrap();
        img.save(&dir.path().join("b.png")).unwrap();
        img.save(&dir.path().join("a.ppm")).unwrap();
        fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let names: Vec<_> = list_images(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.strip_prefix(dir.path()).unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["a.ppm", "b.png", "sub/c.png"]);

        fs::write(dir.path().join(MANIFEST_NAME), "sub/c.png\n\nb.png\n").unwrap();
        let names: Vec<_> = list_images(dir.path()).unwrap();
        assert_eq!(names, [dir.path().join("sub/c.png"), dir.path().join("b.png")]);
    }

    #[test]
    fn noise_level_calibration() {
        let clean = Tensor::full(&[3, 256, 256], 0.5f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (noisy, sigma) = add_gaussian_noise(&clean, &NoiseSpec::fixed(25.0), &mut rng).unwrap();
        assert_eq!(sigma, 25.0);
        let diff = noisy.sub(&clean).unwrap();
        let n = diff.len() as f64;
        let mean = diff.sum() / n;
        let std = (diff.dot(&diff).unwrap() / n - mean * mean).sqrt();
        assert!((std / (25.0 / 255.0) - 1.0).abs() < 0.02);
        let p = psnr(&noisy, &clean, 1.0).unwrap();
        assert!((p - 20.0 * (255.0f64 / 25.0).log10()).abs() < 0.1, "{p}");
    }

    #[test]
    fn noise_is_zero_mean() {
        let clean = Tensor::<f64>::zeros(&[1, 1000, 1000]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (noisy, _) = add_gaussian_noise(&clean, &NoiseSpec::fixed(10.0), &mut rng).unwrap();
        let n = noisy.len() as f64;
        let sigma_n = 10.0 / 255.0;
        assert!((noisy.sum() / n).abs() < 3.0 * sigma_n / n.sqrt());
    }

    #[test]
    fn tiny_sigma_is_nearly_clean() {
        let clean = Tensor::full(&[3, 32, 32], 0.25f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (noisy, _) = add_gaussian_noise(&clean, &NoiseSpec::fixed(1e-6), &mut rng).unwrap();
        assert!(noisy.max_abs_diff(&clean).unwrap() < 1e-7);
    }

    #[test]
    fn blind_sigma_mean() {
        let spec = NoiseSpec::blind(15.0, 50.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mean = (0..10_000).map(|_| spec.draw_sigma(&mut rng)).sum::<f64>() / 10_000.0;
        assert!((mean / 32.5 - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn clip_flag_clamps() {
        let clean = Tensor::full(&[3, 16, 16], 0.98f64).unwrap();
        let spec = NoiseSpec { clip: true, ..NoiseSpec::fixed(50.0) };
        let (noisy, _) = add_gaussian_noise(&clean, &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(noisy.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(NoiseSpec::blind(50.0, 15.0).validate().is_err());
        assert!(NoiseSpec::fixed(0.0).validate().is_err());
    }

    #[test]
    fn crop_edge_cases() {
        let img = Tensor::from_fn(&[3, 5, 6], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(random_crop(&img, 5, &mut rng).unwrap().shape() == [3, 5, 5]);
        let full = Tensor::from_fn(&[3, 4, 4], |i| (i[1] * 4 + i[2]) as f64).unwrap();
        assert_eq!(random_crop(&full, 4, &mut rng).unwrap(), full);
        let px = random_crop(&img, 1, &mut rng).unwrap();
        let v = px.get(&[0, 0, 0]).unwrap() as usize;
        assert_eq!(px.get(&[1, 0, 0]).unwrap() as usize, v + 100);
        assert!(v / 10 < 5 && v % 10 < 6);
    }

    #[test]
    fn crop_pads_small_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (h, w, size) in [(3, 3, 10), (1, 4, 6), (2, 1, 9), (1, 1, 3)] {
            let img = Tensor::from_fn(&[3, h, w], |i| (i[1] * w + i[2]) as f64).unwrap();
            let c = random_crop(&img, size, &mut rng).unwrap();
            assert_eq!(c.shape(), &[3, size, size]);
            assert!(c.data().iter().all(|&v| v >= 0.0 && v < (h * w) as f64));
        }
    }

    #[test]
    fn crop_position_is_uniform() {
        // 6x6 image, 3x3 crop -> 16 positions; identify by top-left value
        let img = Tensor::from_fn(&[1, 6, 6], |i| (i[1] * 6 + i[2]) as f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut counts = [0usize; 36];
        let draws = 10_000;
        for _ in 0..draws {
            let c = random_crop(&img, 3, &mut rng).unwrap();
            counts[c.data()[0] as usize] += 1;
        }
        let expected = draws as f64 / 16.0;
        let chi2: f64 = (0..4)
            .flat_map(|y| (0..4).map(move |x| y * 6 + x))
            .map(|i| (counts[i] as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square, 15 degrees of freedom, p = 0.001
        assert!(chi2 < 37.7, "chi2 = {chi2}");
        assert_eq!(counts.iter().sum::<usize>(), draws);
    }

    #[test]
    fn synthetic_corpus_properties() {
        let a = synth_corpus(20, 32, 11).unwrap();
        assert_eq!(a, synth_corpus(20, 32, 11).unwrap());
        assert_ne!(a, synth_corpus(20, 32, 12).unwrap());
        assert!(a.iter().all(|t| t.shape() == [3, 32, 32]));
        assert!(a.iter().flat_map(|t| t.data()).all(|v| (0.0..=1.0).contains(v)));
        let with_edges = a
            .iter()
            .filter(|img| {
                (0..3).any(|c| {
                    let [_, _, dx, _] = apply_highpass_bank(&img.slice0(c).unwrap()).unwrap();
                    let dx = dx.cast::<f64>();
                    (0..32).any(|y| (0..31).any(|x| dx.get(&[y, x]).unwrap().abs() > 0.5))
                })
            })
            .count();
        assert!(with_edges * 5 >= a.len(), "{with_edges} of {}", a.len());
    }

    #[test]
    fn minibatches() {
        let corpus = synth_corpus(5, 40, 1).unwrap();
        let cfg = TrainConfig { crop: 24, batch: 10, ..Default::default() };
        let it = MinibatchIter::new(&corpus, &cfg, NoiseSpec::fixed(25.0)).unwrap();
        let b = it.clone().next().unwrap().unwrap();
        assert_eq!(b.noisy.shape(), &[10, 3, 24, 24]);
        assert_eq!(b.clean.shape(), &[10, 3, 24, 24]);
        assert_eq!(b, it.batch_at(0).unwrap());
        let mut resumed = it.clone().starting_at(3);
        assert_eq!(resumed.next().unwrap().unwrap(), it.batch_at(3).unwrap());

        let blind = MinibatchIter::new(&corpus, &cfg, NoiseSpec::blind(15.0, 50.0)).unwrap();
        for batch in blind.take(100) {
            let b = batch.unwrap();
            assert!(b.sigmas.iter().all(|s| (15.0..=50.0).contains(s)));
            assert!(b.sigmas.iter().any(|&s| s != b.sigmas[0]));
        }
        let empty: Vec<Tensor<f32>> = Vec::new();
        assert!(matches!(MinibatchIter::new(&empty, &cfg, NoiseSpec::fixed(25.0)), Err(Error::Config(_))));
    }

    #[test]
    fn default_shapes() {
        let corpus = synth_corpus(2, 200, 3).unwrap();
        let it = MinibatchIter::new(&corpus, &TrainConfig::default(), NoiseSpec::fixed(25.0)).unwrap();
        assert_eq!(it.batch_at(0).unwrap().noisy.shape(), &[10, 3, 180, 180]);
    }
}
