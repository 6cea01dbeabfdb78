//! Parsed command line turned into a validated run description.

use std::io;
use std::path::{Path, PathBuf};

use tridenoise::{Arch, Error, ModelConfig, NoiseSpec, Result, TrainConfig};

use crate::args::{Cli, Command, CorpusArgs, ModelArgs, NoiseArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Corpus {
    Dir(PathBuf),
    Synth { count: usize, size: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Job {
    Train { corpus: Corpus, val: Option<PathBuf>, resume: Option<PathBuf>, log_every: usize },
    Denoise { input: PathBuf, output: PathBuf, clean: Option<PathBuf> },
    Eval { data: PathBuf, sigmas: Vec<f64>, csv: Option<PathBuf> },
    Synth { count: usize, size: usize, out: PathBuf },
    Init { zero: bool },
}

/// Topology requested on the command line; `None` means "not given".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelOverrides {
    pub arch: Option<Arch>,
    pub branches: Option<usize>,
    pub width: Option<usize>,
    pub lambda: Option<f64>,
}

impl ModelOverrides {
    fn from_args(m: &ModelArgs) -> Self {
        Self { arch: m.arch, branches: m.branches, width: m.width, lambda: m.lambda }
    }

    pub fn apply(&self, base: ModelConfig) -> ModelConfig {
        ModelConfig {
            arch: self.arch.unwrap_or(base.arch),
            branches: self.branches.unwrap_or(base.branches),
            width: self.width.unwrap_or(base.width),
            lambda: self.lambda.unwrap_or(base.lambda),
        }
    }

    /// Fails when a given flag disagrees with a checkpoint's topology.
    pub fn check(&self, stored: &ModelConfig) -> Result<()> {
        if self.apply(stored.clone()) == *stored {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "checkpoint holds a model with config \"{stored}\", which does not match the requested {}",
                self.apply(stored.clone())
            )))
        }
    }
}

/// Everything one invocation needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub job: Job,
    /// Written by `train`/`init`, read by `denoise`/`eval`.
    pub checkpoint: Option<PathBuf>,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub model: ModelOverrides,
    pub ensemble: bool,
    pub seed: u64,
    pub precision: Precision,
}

fn precision(f64: bool) -> Precision {
    if f64 {
        Precision::F64
    } else {
        Precision::F32
    }
}

fn noise(n: &NoiseArgs, clip: bool, seed: u64) -> NoiseSpec {
    let spec = match (n.sigma, n.blind) {
        (_, Some((lo, hi))) => NoiseSpec::blind(lo, hi),
        (Some(s), None) => NoiseSpec::fixed(s),
        (None, None) => NoiseSpec::fixed(25.0),
    };
    NoiseSpec { clip, ..spec.with_seed(seed) }
}

fn corpus(c: &CorpusArgs) -> Corpus {
    match (&c.data, c.synth) {
        (Some(dir), _) => Corpus::Dir(dir.clone()),
        (None, Some((count, size))) => Corpus::Synth { count, size },
        (None, None) => unreachable!("clap requires one corpus source"),
    }
}

impl RunConfig {
    pub fn from_cli(cli: Cli) -> Self {
        let base = Self {
            job: Job::Init { zero: false },
            checkpoint: None,
            noise: NoiseSpec::fixed(25.0),
            train: TrainConfig::default(),
            model: ModelOverrides::default(),
            ensemble: false,
            seed: 0,
            precision: Precision::F32,
        };
        match cli.command {
            Command::Train(a) => Self {
                job: Job::Train {
                    corpus: corpus(&a.corpus),
                    val: a.val,
                    resume: a.resume,
                    log_every: a.log_every,
                },
                checkpoint: Some(a.out),
                noise: noise(&a.noise, a.clip, a.seed),
                train: TrainConfig {
                    crop: a.crop,
                    batch: a.batch,
                    iters_stage1: a.iters1,
                    iters_stage2: a.iters2,
                    lr_stage1: a.lr1,
                    lr_stage2: a.lr2,
                    seed: a.seed,
                },
                model: ModelOverrides::from_args(&a.model),
                seed: a.seed,
                precision: precision(a.f64),
                ..base
            },
            Command::Denoise(a) => Self {
                job: Job::Denoise { input: a.input, output: a.output, clean: a.clean },
                checkpoint: Some(a.model),
                model: ModelOverrides { arch: a.arch, ..Default::default() },
                ensemble: a.ensemble,
                precision: precision(a.f64),
                ..base
            },
            Command::Eval(a) => Self {
                job: Job::Eval { data: a.data, sigmas: a.sigmas, csv: a.csv },
                checkpoint: Some(a.model),
                noise: NoiseSpec { clip: a.clip, ..NoiseSpec::fixed(25.0).with_seed(a.seed) },
                model: ModelOverrides { arch: a.arch, ..Default::default() },
                ensemble: a.ensemble,
                seed: a.seed,
                precision: precision(a.f64),
                ..base
            },
            Command::Synth(a) => {
                Self { job: Job::Synth { count: a.count, size: a.size, out: a.out }, seed: a.seed, ..base }
            }
            Command::Init(a) => Self {
                job: Job::Init { zero: a.zero },
                checkpoint: Some(a.out),
                model: ModelOverrides::from_args(&a.model),
                seed: a.seed,
                ..base
            },
        }
    }

    /// Model configuration for a fresh model.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let c = self.model.apply(ModelConfig::default());
        c.validate()?;
        Ok(c)
    }

    pub fn checkpoint_path(&self) -> Result<&Path> {
        self.checkpoint.as_deref().ok_or_else(|| Error::Config("no checkpoint path".into()))
    }

    /// Checks option values and that every path exists (inputs) or can be
    /// created (outputs) before any work starts.
    pub fn validate(&self) -> Result<()> {
        match &self.job {
            Job::Train { corpus, val, resume, log_every } => {
                self.train.validate()?;
                self.noise.validate()?;
                if *log_every == 0 {
                    return Err(Error::Config("--log-every must be positive".into()));
                }
                if resume.is_none() {
                    self.model_config()?;
                }
                if let Corpus::Dir(d) = corpus {
                    existing_dir(d, "training data")?;
                }
                if let Some(v) = val {
                    existing_dir(v, "validation data")?;
                }
                if let Some(r) = resume {
                    existing_file(r, "resume checkpoint")?;
                }
                writable_target(self.checkpoint_path()?, "checkpoint")
            }
            Job::Denoise { input, output, clean } => {
                existing_file(self.checkpoint_path()?, "model")?;
                if !input.exists() {
                    return Err(not_found(input, "input"));
                }
                if let Some(c) = clean {
                    if c.is_dir() != input.is_dir() || !c.exists() {
                        return Err(not_found(c, "clean reference (must be a file or folder like the input)"));
                    }
                }
                if input.is_dir() {
                    parent_exists(output, "output folder")
                } else {
                    writable_target(output, "output image")
                }
            }
            Job::Eval { data, sigmas, csv } => {
                if sigmas.is_empty() || sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(Error::Config(format!("--sigmas must be positive numbers, got {sigmas:?}")));
                }
                existing_file(self.checkpoint_path()?, "model")?;
                existing_dir(data, "evaluation data")?;
                match csv {
                    Some(p) => writable_target(p, "CSV"),
                    None => Ok(()),
                }
            }
            Job::Synth { count, size, out } => {
                if *count == 0 || *size == 0 {
                    return Err(Error::Config("--count and --size must be positive".into()));
                }
                parent_exists(out, "output folder")
            }
            Job::Init { .. } => {
                self.model_config()?;
                writable_target(self.checkpoint_path()?, "checkpoint")
            }
        }
    }
}

fn not_found(path: &Path, what: &str) -> Error {
    Error::Io(io::Error::new(io::ErrorKind::NotFound, format!("{what} {} not found", path.display())))
}

fn existing_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(not_found(path, what))
    }
}

fn existing_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(not_found(path, &format!("{what} folder")))
    }
}

fn parent_exists(path: &Path, what: &str) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if parent.is_dir() {
        Ok(())
    } else {
        Err(not_found(parent, &format!("parent folder of {what}")))
    }
}

fn writable_target(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{what} path {} is a folder", path.display()),
        )));
    }
    parent_exists(path, what)
}
