use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tridenoise::data::{add_gaussian_noise, eval_noise_rng, list_images, load_dataset, synth_corpus, NoiseMode};
use tridenoise::nn::{AdamConfig, AdamState};
use tridenoise::objective::ImageMetrics;
use tridenoise::train::{load_optimizer, save_optimizer, train_stage, TrainEvent, TrainOptions};
use tridenoise::{
    crop, psnr, ssim, Checkpoint, Error, ImageBuffer, MetricReport, NoiseSpec, Result, Scalar, Tensor, TrainStage,
    TwoStageModel,
};

use crate::config::{Corpus, Job, RunConfig};

/// Held-out images used for validation when no folder is given.
const VALIDATION_IMAGES: usize = 4;
const VALIDATION_SEED_SALT: u64 = 0x7661_6c69_6461;

fn load_model<T: Scalar>(rc: &RunConfig, path: &Path) -> Result<(Checkpoint, TwoStageModel<T>)> {
    let ck = Checkpoint::load(path)?;
    let model = TwoStageModel::from_checkpoint(&ck)?;
    rc.model.check(model.config())?;
    Ok((ck, model))
}

/// Writes to a sibling file first so an interrupted write never clobbers
/// the previous checkpoint.
fn save_atomic(ck: &Checkpoint, path: &Path) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    ck.save(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn nonempty<T>(items: Vec<T>, dir: &Path) -> Result<Vec<T>> {
    if items.is_empty() {
        return Err(Error::Format(format!("no PNG/PPM images in {}", dir.display())));
    }
    Ok(items)
}

fn load_images<T: Scalar>(dir: &Path) -> Result<Vec<Tensor<T>>> {
    nonempty(load_dataset(dir)?.into_iter().map(|(_, t)| t).collect(), dir)
}

/// Top-left `size x size` window (or the whole image when smaller).
fn window<T: Scalar>(img: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let h = img.shape()[1].min(size);
    let w = img.shape()[2].min(size);
    crop(&crop(img, 1, 0, h)?, 2, 0, w)
}

fn noisy_copy<T: Scalar>(clean: &Tensor<T>, sigma: f64, clip: bool, seed: u64, index: usize) -> Result<Tensor<T>> {
    let spec = NoiseSpec { clip, ..NoiseSpec::fixed(sigma) };
    Ok(add_gaussian_noise(clean, &spec, &mut eval_noise_rng(seed, sigma, index))?.0)
}

fn validation_pairs<T: Scalar>(rc: &RunConfig, corpus: &Corpus, train: &[Tensor<T>]) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    let Job::Train { val, .. } = &rc.job else { unreachable!() };
    let clean: Vec<Tensor<T>> = match (val, corpus) {
        (Some(dir), _) => load_images(dir)?,
        (None, Corpus::Synth { count, size }) => {
            synth_corpus((*count).min(VALIDATION_IMAGES), *size, rc.seed ^ VALIDATION_SEED_SALT)?
                .iter()
                .map(Tensor::cast)
                .collect()
        }
        (None, Corpus::Dir(_)) => train.iter().take(VALIDATION_IMAGES).cloned().collect(),
    };
    let sigma = match rc.noise.mode {
        NoiseMode::Fixed(s) => s,
        NoiseMode::Blind { min, max } => 0.5 * (min + max),
    };
    clean
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let c = window(c, rc.train.crop)?;
            Ok((noisy_copy(&c, sigma, rc.noise.clip, rc.seed, i)?, c))
        })
        .collect()
}

fn log_line(e: &TrainEvent, blind: bool) -> String {
    let mut line = format!("iter={} loss={:.6} val_psnr={:.4}", e.iter, e.loss, e.val_psnr.unwrap_or(f64::NAN));
    if blind {
        let sigmas: Vec<String> = e.sigmas.iter().map(|s| format!("{s:.2}")).collect();
        let _ = write!(line, " sigmas={}", sigmas.join(","));
    }
    line
}

pub fn train<T: Scalar>(rc: &RunConfig, log: &mut impl Write) -> Result<()> {
    let Job::Train { corpus, resume, log_every, .. } = &rc.job else { unreachable!() };
    let out = rc.checkpoint_path()?;
    let images: Vec<Tensor<T>> = match corpus {
        Corpus::Dir(dir) => load_images(dir)?,
        Corpus::Synth { count, size } => synth_corpus(*count, *size, rc.seed)?.iter().map(Tensor::cast).collect(),
    };
    let options = TrainOptions {
        log_every: *log_every,
        validation: validation_pairs(rc, corpus, &images)?,
        ..TrainOptions::default()
    };

    let adam1 = AdamConfig::new(rc.train.lr_stage1);
    let adam2 = AdamConfig::new(rc.train.lr_stage2);
    let (mut model, mut opt1, mut opt2) = match resume {
        Some(path) => {
            let (ck, model) = load_model::<T>(rc, path)?;
            let opt1 = load_optimizer(&ck, TrainStage::One, adam1)?;
            let opt2 = load_optimizer(&ck, TrainStage::Two, adam2)?;
            (model, opt1.unwrap_or_else(|| AdamState::new(adam1)), opt2)
        }
        None => (TwoStageModel::new(rc.model_config()?, rc.seed)?, AdamState::new(adam1), None),
    };
    model.freeze_stage1 = true;
    writeln!(log, "# model {}", model.config())?;

    let snapshot = |model: &TwoStageModel<T>, opt1: &AdamState<T>, opt2: Option<&AdamState<T>>| -> Result<()> {
        let mut ck = model.to_checkpoint();
        save_optimizer(&mut ck, TrainStage::One, opt1)?;
        if let Some(o) = opt2 {
            save_optimizer(&mut ck, TrainStage::Two, o)?;
        }
        save_atomic(&ck, out)
    };
    // Written before any step so an unwritable path fails early.
    snapshot(&model, &opt1, opt2.as_ref())?;

    let blind = matches!(rc.noise.mode, NoiseMode::Blind { .. });
    if opt2.is_none() {
        writeln!(log, "# stage 1: {} iterations, lr {}", rc.train.iters_stage1, rc.train.lr_stage1)?;
        train_stage(&mut model, &mut opt1, TrainStage::One, &images, &rc.train, rc.noise, &options, |e, m, o| {
            if e.val_psnr.is_some() {
                writeln!(log, "{}", log_line(e, blind))?;
                snapshot(m, o, None)?;
            }
            Ok(())
        })?;
    }
    if model.stage2.is_some() {
        let mut state = opt2.take().unwrap_or_else(|| AdamState::new(adam2));
        writeln!(log, "# stage 2: {} iterations, lr {}", rc.train.iters_stage2, rc.train.lr_stage2)?;
        train_stage(&mut model, &mut state, TrainStage::Two, &images, &rc.train, rc.noise, &options, |e, m, o| {
            if e.val_psnr.is_some() {
                writeln!(log, "{}", log_line(e, blind))?;
                snapshot(m, &opt1, Some(o))?;
            }
            Ok(())
        })?;
        opt2 = Some(state);
    }
    snapshot(&model, &opt1, opt2.as_ref())?;
    writeln!(log, "# saved {}", out.display())?;
    Ok(())
}

fn run_model<T: Scalar>(model: &TwoStageModel<T>, noisy: &Tensor<T>, ensemble: bool) -> Result<Tensor<T>> {
    if ensemble {
        model.enhanced_denoise(noisy)
    } else {
        model.denoise(noisy)
    }
}

fn metrics<T: Scalar>(estimate: &Tensor<T>, reference: &Tensor<T>) -> Result<ImageMetrics> {
    Ok(ImageMetrics { psnr: psnr(estimate, reference, 1.0)?, ssim: ssim(estimate, reference)? })
}

struct DenoiseItem {
    input: PathBuf,
    output: PathBuf,
    clean: Option<PathBuf>,
}

fn denoise_items(input: &Path, output: &Path, clean: Option<&Path>) -> Result<Vec<DenoiseItem>> {
    if !input.is_dir() {
        return Ok(vec![DenoiseItem { input: input.into(), output: output.into(), clean: clean.map(Into::into) }]);
    }
    fs::create_dir_all(output)?;
    let files = nonempty(list_images(input)?, input)?;
    Ok(files
        .into_iter()
        .map(|f| {
            let rel = f.strip_prefix(input).unwrap_or(&f).to_path_buf();
            DenoiseItem {
                output: output.join(rel.with_extension("png")),
                clean: clean.map(|c| c.join(&rel)),
                input: f,
            }
        })
        .collect())
}

pub fn denoise<T: Scalar>(rc: &RunConfig, log: &mut impl Write) -> Result<()> {
    let Job::Denoise { input, output, clean } = &rc.job else { unreachable!() };
    let (_, model) = load_model::<T>(rc, rc.checkpoint_path()?)?;
    let items = denoise_items(input, output, clean.as_deref())?;
    let results = items
        .par_iter()
        .map(|item| {
            let noisy = ImageBuffer::load(&item.input)?;
            let x: Tensor<T> = noisy.to_tensor();
            let y = ImageBuffer::from_tensor(&run_model(&model, &x, rc.ensemble)?)?;
            let scores = match &item.clean {
                Some(c) => {
                    let reference: Tensor<T> = ImageBuffer::load(c)?.to_tensor();
                    Some((metrics(&y.to_tensor(), &reference)?, metrics(&x, &reference)?))
                }
                None => None,
            };
            Ok((y, scores))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out_scores = Vec::new();
    let mut in_scores = Vec::new();
    for (item, (image, scores)) in items.iter().zip(results) {
        if let Some(parent) = item.output.parent() {
            fs::create_dir_all(parent)?;
        }
        image.save(&item.output)?;
        match scores {
            Some((o, i)) => {
                writeln!(
                    log,
                    "{} psnr={:.4} ssim={:.6} input_psnr={:.4} input_ssim={:.6}",
                    item.output.display(),
                    o.psnr,
                    o.ssim,
                    i.psnr,
                    i.ssim
                )?;
                out_scores.push(o);
                in_scores.push(i);
            }
            None => writeln!(log, "{}", item.output.display())?,
        }
    }
    if out_scores.len() > 1 {
        let o = MetricReport::from_images(out_scores);
        let i = MetricReport::from_images(in_scores);
        writeln!(
            log,
            "mean psnr={:.4} ssim={:.6} input_psnr={:.4} input_ssim={:.6}",
            o.mean_psnr, o.mean_ssim, i.mean_psnr, i.mean_ssim
        )?;
    }
    Ok(())
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub sigma: f64,
    pub denoised: MetricReport,
    pub noisy: MetricReport,
}

pub const CSV_HEADER: &str = "sigma,psnr,ssim,n_images,noisy_psnr,noisy_ssim";

pub fn csv(rows: &[EvalRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.4},{:.6},{},{:.4},{:.6}",
            r.sigma,
            r.denoised.mean_psnr,
            r.denoised.mean_ssim,
            r.denoised.per_image.len(),
            r.noisy.mean_psnr,
            r.noisy.mean_ssim
        );
    }
    s
}

pub fn table(rows: &[EvalRow]) -> String {
    let mut s = format!(
        "{:>7} {:>9} {:>8} {:>8} {:>11} {:>10}\n",
        "sigma", "psnr", "ssim", "n_images", "noisy_psnr", "noisy_ssim"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>7} {:>9.4} {:>8.4} {:>8} {:>11.4} {:>10.4}",
            r.sigma,
            r.denoised.mean_psnr,
            r.denoised.mean_ssim,
            r.denoised.per_image.len(),
            r.noisy.mean_psnr,
            r.noisy.mean_ssim
        );
    }
    s
}

/// Scores the model on every clean image at each noise level. Noise for
/// image `i` at level `sigma` comes from [`eval_noise_rng`], so results do
/// not depend on scheduling.
pub fn evaluate<T: Scalar>(
    model: &TwoStageModel<T>,
    clean: &[Tensor<T>],
    sigmas: &[f64],
    noise: NoiseSpec,
    ensemble: bool,
) -> Result<Vec<EvalRow>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let per_image = clean
                .par_iter()
                .enumerate()
                .map(|(i, c)| {
                    let noisy = noisy_copy(c, sigma, noise.clip, noise.seed, i)?;
                    let estimate = run_model(model, &noisy, ensemble)?.clamp(T::zero(), T::one());
                    Ok((metrics(&estimate, c)?, metrics(&noisy, c)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let (den, noisy): (Vec<_>, Vec<_>) = per_image.into_iter().unzip();
            Ok(EvalRow { sigma, denoised: MetricReport::from_images(den), noisy: MetricReport::from_images(noisy) })
        })
        .collect()
}

pub fn eval<T: Scalar>(rc: &RunConfig, log: &mut impl Write) -> Result<()> {
    let Job::Eval { data, sigmas, csv: csv_path } = &rc.job else { unreachable!() };
    let (_, model) = load_model::<T>(rc, rc.checkpoint_path()?)?;
    let clean = load_images::<T>(data)?;
    let rows = evaluate(&model, &clean, sigmas, rc.noise, rc.ensemble)?;
    write!(log, "{}", table(&rows))?;
    if let Some(p) = csv_path {
        fs::write(p, csv(&rows))?;
    }
    Ok(())
}

pub fn synth(rc: &RunConfig, log: &mut impl Write) -> Result<()> {
    let Job::Synth { count, size, out } = &rc.job else { unreachable!() };
    fs::create_dir_all(out)?;
    for (i, img) in synth_corpus(*count, *size, rc.seed)?.iter().enumerate() {
        let path = out.join(format!("synth_{i:04}.png"));
        ImageBuffer::from_tensor(img)?.save(&path)?;
    }
    writeln!(log, "wrote {count} images to {}", out.display())?;
    Ok(())
}

pub fn init(rc: &RunConfig, log: &mut impl Write) -> Result<()> {
    let Job::Init { zero } = &rc.job else { unreachable!() };
    let config = rc.model_config()?;
    let model: TwoStageModel = if *zero { TwoStageModel::zeroed(config)? } else { TwoStageModel::new(config, rc.seed)? };
    let out = rc.checkpoint_path()?;
    save_atomic(&model.to_checkpoint(), out)?;
    writeln!(log, "# model {}", model.config())?;
    writeln!(log, "# saved {}", out.display())?;
    Ok(())
}
