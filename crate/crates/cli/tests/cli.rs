use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use tridenoise::data::synth_corpus;
use tridenoise::{Checkpoint, ImageBuffer, ModelConfig, TwoStageModel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tridenoise"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `(iter, loss, val_psnr)` of every log line.
fn log_points(log: &str) -> Vec<(usize, f64, f64)> {
    log.lines()
        .filter(|l| l.starts_with("iter="))
        .map(|l| {
            let field = |key: &str| {
                l.split_whitespace().find_map(|f| f.strip_prefix(key)).unwrap_or_else(|| panic!("{key} in {l}"))
            };
            (field("iter=").parse().unwrap(), field("loss=").parse().unwrap(), field("val_psnr=").parse().unwrap())
        })
        .collect()
}

const TOY: &[&str] = &["--arch", "3dr", "--width", "4", "--batch", "4", "--crop", "24", "--synth", "8:32", "--seed", "3"];

fn train(dir: &Path, name: &str, extra: &[&str]) -> (PathBuf, String) {
    let ck = dir.join(name);
    let mut args = vec!["train", "--out", s(&ck)];
    if extra.contains(&"--arch") {
        args.extend_from_slice(&TOY[2..]);
    } else {
        args.extend_from_slice(TOY);
    }
    args.extend_from_slice(extra);
    let log = ok(&args);
    (ck, log)
}

fn zero_checkpoint(dir: &Path) -> PathBuf {
    let ck = dir.join("zero.ckpt");
    ok(&["init", "--zero", "--arch", "3dr+alexmini", "--width", "4", "--out", s(&ck)]);
    ck
}

fn synth_dir(dir: &Path, name: &str, count: &str, size: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&["synth", "--count", count, "--size", size, "--seed", "8", "--out", s(&out)]);
    out
}

#[test]
fn smoke_training_descends() {
    let tmp = TempDir::new().unwrap();
    let (ck, log) = train(tmp.path(), "m.ckpt", &["--iters1", "50", "--iters2", "0", "--log-every", "10"]);
    let points = log_points(&log);
    assert_eq!(points.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 10, 20, 30, 40, 50]);
    let (first, last) = (points[0], points[points.len() - 1]);
    assert!(last.1 < first.1, "loss {} -> {}\n{log}", first.1, last.1);
    assert!(last.2.is_finite());
    let model = TwoStageModel::<f32>::from_checkpoint(&Checkpoint::load(&ck).unwrap()).unwrap();
    assert_eq!(model.config().to_string(), "arch=3dr;branches=2;width=4;lambda=0.5");
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let tmp = TempDir::new().unwrap();
    let (full_ck, full) = train(tmp.path(), "full.ckpt", &["--iters1", "12", "--iters2", "0", "--log-every", "3"]);
    let (half_ck, _) = train(tmp.path(), "half.ckpt", &["--iters1", "6", "--iters2", "0", "--log-every", "3"]);
    let resumed_ck = tmp.path().join("resumed.ckpt");
    let mut args = vec!["train", "--out", s(&resumed_ck), "--resume", s(&half_ck)];
    args.extend_from_slice(TOY);
    args.extend_from_slice(&["--iters1", "12", "--iters2", "0", "--log-every", "3"]);
    let resumed = ok(&args);

    let full_points = log_points(&full);
    let resumed_points = log_points(&resumed);
    assert_eq!(resumed_points.first().unwrap().0, 9, "{resumed}");
    assert_eq!(&full_points[full_points.len() - 2..], &resumed_points[..], "{full}\n---\n{resumed}");
    assert_eq!(fs::read(&full_ck).unwrap(), fs::read(&resumed_ck).unwrap());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let args = ["--iters1", "4", "--iters2", "2", "--arch", "3dr+vggmini", "--log-every", "2"];
    let (a, log_a) = train(tmp.path(), "a.ckpt", &args);
    let (b, log_b) = train(tmp.path(), "b.ckpt", &args);
    assert_eq!(log_a.replace("a.ckpt", "b.ckpt"), log_b);
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    assert!(log_a.contains("# stage 2"), "{log_a}");
}

#[test]
fn blind_training_logs_each_sigma() {
    let tmp = TempDir::new().unwrap();
    let (_, log) = train(tmp.path(), "b.ckpt", &["--iters1", "2", "--iters2", "0", "--log-every", "1", "--blind", "15:50"]);
    let lines: Vec<&str> = log.lines().filter(|l| l.starts_with("iter=")).collect();
    assert_eq!(lines.len(), 2);
    for line in lines {
        let sigmas: Vec<f64> = line
            .split_whitespace()
            .find_map(|f| f.strip_prefix("sigmas="))
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(sigmas.len(), 4, "one per sample: {line}");
        assert!(sigmas.iter().all(|s| (15.0..=50.0).contains(s)), "{line}");
    }
}

#[test]
fn diverging_training_exits_3_and_keeps_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let ck = tmp.path().join("nan.ckpt");
    let mut args = vec!["train", "--out", s(&ck)];
    args.extend_from_slice(TOY);
    args.extend_from_slice(&["--iters1", "30", "--iters2", "0", "--log-every", "1", "--lr1", "1e38"]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("last good checkpoint"));
    let model = TwoStageModel::<f32>::from_checkpoint(&Checkpoint::load(&ck).unwrap()).unwrap();
    assert!(model.params().iter().all(|p| p.value.all_finite()));
}

#[test]
fn zero_model_denoise_returns_input() {
    let tmp = TempDir::new().unwrap();
    let ck = zero_checkpoint(tmp.path());
    let images = synth_dir(tmp.path(), "in", "3", "20");
    let plain = tmp.path().join("plain");
    let ens = tmp.path().join("ens");
    ok(&["denoise", "--model", s(&ck), "--input", s(&images), "--output", s(&plain)]);
    ok(&["denoise", "--model", s(&ck), "--input", s(&images), "--output", s(&ens), "--ensemble"]);
    for i in 0..3 {
        let name = format!("synth_{i:04}.png");
        let input = ImageBuffer::load(&images.join(&name)).unwrap();
        assert_eq!(ImageBuffer::load(&plain.join(&name)).unwrap(), input);
        assert_eq!(ImageBuffer::load(&ens.join(&name)).unwrap(), input);
    }
}

#[test]
fn denoise_reports_metrics_against_clean() {
    let tmp = TempDir::new().unwrap();
    let ck = zero_checkpoint(tmp.path());
    let clean = synth_dir(tmp.path(), "clean", "1", "24");
    let file = clean.join("synth_0000.png");
    let out = tmp.path().join("o.png");
    let log = ok(&["denoise", "--model", s(&ck), "--input", s(&file), "--output", s(&out), "--clean", s(&file)]);
    assert!(log.contains("psnr=inf") || log.contains("psnr=1"), "{log}");
    assert!(log.contains("ssim=1.000000"), "{log}");
}

#[test]
fn architecture_mismatch_cites_checkpoint_config() {
    let tmp = TempDir::new().unwrap();
    let ck = zero_checkpoint(tmp.path());
    let images = synth_dir(tmp.path(), "in", "1", "16");
    let out = run(&[
        "denoise",
        "--model",
        s(&ck),
        "--arch",
        "3dr",
        "--input",
        s(&images),
        "--output",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("arch=3dr+alexmini;branches=2;width=4;lambda=0.5"), "{err}");

    // a checkpoint whose tensors do not fit its own config string
    let mut bad = Checkpoint::load(&ck).unwrap();
    bad.config = ModelConfig { width: 5, .."arch=3dr+alexmini;branches=2;width=4;lambda=0.5".parse().unwrap() }.to_string();
    let bad_path = tmp.path().join("bad.ckpt");
    bad.save(&bad_path).unwrap();
    let out = run(&["denoise", "--model", s(&bad_path), "--input", s(&images), "--output", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("width=5"));
}

#[test]
fn eval_csv_is_deterministic_and_complete() {
    let tmp = TempDir::new().unwrap();
    let ck = zero_checkpoint(tmp.path());
    let data = synth_dir(tmp.path(), "eval", "2", "48");
    let csv_a = tmp.path().join("a.csv");
    let csv_b = tmp.path().join("b.csv");
    let table = ok(&["eval", "--model", s(&ck), "--data", s(&data), "--csv", s(&csv_a), "--seed", "5"]);
    ok(&["eval", "--model", s(&ck), "--data", s(&data), "--csv", s(&csv_b), "--seed", "5"]);
    let a = fs::read_to_string(&csv_a).unwrap();
    assert_eq!(a, fs::read_to_string(&csv_b).unwrap());

    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "sigma,psnr,ssim,n_images,noisy_psnr,noisy_ssim");
    assert_eq!(lines.len(), 1 + 3, "{a}");
    let noisy: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
    assert!(noisy.windows(2).all(|w| w[0] > w[1]), "{noisy:?}");
    assert!(lines[1..].iter().all(|l| l.split(',').nth(3) == Some("2")));
    assert_eq!(table.lines().count(), 4, "{table}");
}

#[test]
fn eval_noisy_baseline_matches_analytic_value() {
    let tmp = TempDir::new().unwrap();
    let ck = zero_checkpoint(tmp.path());
    let data = tmp.path().join("big");
    fs::create_dir(&data).unwrap();
    // mid-gray keeps the unclipped noise off the 8-bit bounds
    let img = ImageBuffer { width: 256, height: 256, pixels: vec![128; 256 * 256 * 3] };
    img.save(&data.join("gray.png")).unwrap();
    let csv = tmp.path().join("e.csv");
    ok(&["eval", "--model", s(&ck), "--data", s(&data), "--csv", s(&csv), "--sigmas", "15,25,50"]);
    for line in fs::read_to_string(&csv).unwrap().lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let analytic = 20.0 * (255.0 / f[0]).log10();
        assert!((f[4] - analytic).abs() <= 0.2, "{line} vs {analytic}");
    }
}

#[test]
fn eval_rejects_empty_dataset() {
    let tmp = TempDir::new().unwrap();
    let ck = zero_checkpoint(tmp.path());
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = run(&["eval", "--model", s(&ck), "--data", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_for_usage_and_io() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["train", "--out", "x"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--synth", "2:8", "--out", "x", "--branches", "9"]).status.code(), Some(1));
    assert_eq!(run(&["denoise", "--model", "/no/such.ckpt", "--input", "/no", "--output", "o"]).status.code(), Some(2));
    let tmp = TempDir::new().unwrap();
    let unwritable = tmp.path().join("missing").join("m.ckpt");
    assert_eq!(run(&["train", "--synth", "2:8", "--out", s(&unwritable)]).status.code(), Some(2));
}

#[test]
fn synth_matches_library_corpus() {
    let tmp = TempDir::new().unwrap();
    let dir = synth_dir(tmp.path(), "s", "2", "12");
    let expected = synth_corpus(2, 12, 8).unwrap();
    for (i, t) in expected.iter().enumerate() {
        let img = ImageBuffer::load(&dir.join(format!("synth_{i:04}.png"))).unwrap();
        assert_eq!(img, ImageBuffer::from_tensor(t).unwrap());
    }
}
