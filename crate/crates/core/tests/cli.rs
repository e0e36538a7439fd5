//! End-to-end checks of the command-line interface: exit statuses, byte
//! determinism, and the structured outputs. Each test drives the compiled
//! binary through a temp directory.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use selfdeblur::io;
use selfdeblur::report::{BenchTable, LambdaSource, Manifest};
use selfdeblur::tensor::Tensor;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_selfdeblur"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_status(out: &Output, want: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "{what}: expected status {want}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

/// A small sharp test image on disk, plus its path.
fn write_sharp(dir: &Path, h: usize, w: usize) -> PathBuf {
    let mut img = Tensor::<f32>::filled(&[1, h, w], 0.3);
    for i in 0..h {
        for j in 0..w {
            if (4..h - 4).contains(&i) && (4..w / 2).contains(&j) {
                img.data_mut()[i * w + j] = 0.85;
            }
            if i.abs_diff(j) <= 1 {
                img.data_mut()[i * w + j] = 0.1;
            }
        }
    }
    let path = dir.join("sharp.pgm");
    io::write_image_8bit(&path, &img).unwrap();
    path
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let sharp = write_sharp(tmp.path(), 24, 24);
    let pair = tmp.path().join("pair");
    let out = run(&[
        "synth", "--input", &s(&sharp), "--out-dir", &s(&pair),
        "--kernel-size", "3", "--walk-steps", "40", "--step-std", "0.6",
        "--sigma", "0.01", "--seed", "5",
    ]);
    assert_status(&out, 0, "synth");

    let blurry = pair.join("blurry.pfmx");
    let mut outputs = Vec::new();
    for name in ["runA", "runB"] {
        let dir = tmp.path().join(name);
        let out = run(&[
            "deblur", "--input", &s(&blurry), "--out-dir", &s(&dir),
            "--kernel-size", "3", "--preset", "desk", "--iters", "8",
            "--snapshot-iters", "2,5", "--deterministic",
        ]);
        assert_status(&out, 0, "deblur");
        outputs.push(dir);
    }
    let mut names: Vec<String> = std::fs::read_dir(&outputs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"kernel.txt".to_string()));
    assert!(names.contains(&"snapshot_000002.pgm".to_string()));
    assert!(names.contains(&"snapshot_000005.pgm".to_string()));
    for name in &names {
        let a = std::fs::read(outputs[0].join(name)).unwrap();
        let b = std::fs::read(outputs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical deterministic runs");
    }
}

#[test]
fn manifest_records_the_estimated_noise_level() {
    let tmp = tempfile::tempdir().unwrap();
    let sharp = write_sharp(tmp.path(), 32, 32);
    let pair = tmp.path().join("pair");
    let out = run(&[
        "synth", "--input", &s(&sharp), "--out-dir", &s(&pair),
        "--kernel-size", "3", "--walk-steps", "40", "--step-std", "0.6",
        "--sigma", "0.01", "--seed", "2",
    ]);
    assert_status(&out, 0, "synth");

    let dir = tmp.path().join("run");
    let out = run(&[
        "deblur", "--input", &s(&pair.join("blurry.pfmx")), "--out-dir", &s(&dir),
        "--kernel-size", "3", "--preset", "desk", "--iters", "4",
        "--sigma", "auto", "--deterministic",
    ]);
    assert_status(&out, 0, "deblur");

    let manifest = Manifest::read(&dir.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lambda_source, LambdaSource::SigmaEstimated);
    let sigma = manifest.sigma.expect("estimated sigma is recorded");
    assert!((0.007..=0.013).contains(&sigma), "sigma estimate {sigma} out of range for 0.01");
    assert_eq!(manifest.config.lambda, 0.1 * sigma, "lambda must follow the 0.1 sigma rule");
    assert_eq!(manifest.losses.len(), manifest.config.iters, "loss array length = iteration count");
    assert_eq!(manifest.wall_secs, 0.0, "deterministic manifests record zero wall time");
    for l in &manifest.losses {
        assert_eq!(l.total, l.fidelity + l.lambda * l.tv);
    }
}

#[test]
fn synth_with_no_walk_and_no_noise_is_a_central_crop() {
    let tmp = tempfile::tempdir().unwrap();
    let sharp = write_sharp(tmp.path(), 20, 20);
    let pair = tmp.path().join("pair");
    let out = run(&[
        "synth", "--input", &s(&sharp), "--out-dir", &s(&pair),
        "--kernel-size", "5", "--walk-steps", "0", "--sigma", "0",
    ]);
    assert_status(&out, 0, "synth");
    let x: Tensor<f32> = io::read_image(&pair.join("sharp.pfmx")).unwrap();
    let y: Tensor<f32> = io::read_image(&pair.join("blurry.pfmx")).unwrap();
    let (_, h, w) = x.dims3();
    let (_, hy, wy) = y.dims3();
    assert_eq!((hy, wy), (h - 4, w - 4));
    for i in 0..hy {
        for j in 0..wy {
            assert_eq!(y.data()[i * wy + j], x.data()[(i + 2) * w + j + 2]);
        }
    }

    // Same seed, same bytes.
    let again = tmp.path().join("pair2");
    let out = run(&[
        "synth", "--input", &s(&sharp), "--out-dir", &s(&again),
        "--kernel-size", "5", "--walk-steps", "0", "--sigma", "0",
    ]);
    assert_status(&out, 0, "synth");
    for name in ["sharp.pfmx", "blurry.pfmx", "kernel.txt", "meta.txt"] {
        assert_eq!(
            std::fs::read(pair.join(name)).unwrap(),
            std::fs::read(again.join(name)).unwrap(),
            "{name} differs across identical synth invocations"
        );
    }

    // Kernel larger than the image is a usage error.
    let out = run(&[
        "synth", "--input", &s(&sharp), "--out-dir", &s(&tmp.path().join("bad")),
        "--kernel-size", "21", "--walk-steps", "0", "--sigma", "0",
    ]);
    assert_status(&out, 2, "oversized kernel");
}

#[test]
fn eval_of_the_truth_against_itself_hits_the_anchors() {
    let tmp = tempfile::tempdir().unwrap();
    let sharp = write_sharp(tmp.path(), 24, 24);
    let pair = tmp.path().join("pair");
    let out = run(&[
        "synth", "--input", &s(&sharp), "--out-dir", &s(&pair),
        "--kernel-size", "3", "--walk-steps", "30", "--step-std", "0.5",
        "--sigma", "0", "--seed", "4",
    ]);
    assert_status(&out, 0, "synth");

    let dir = tmp.path().join("eval");
    let out = run(&[
        "eval",
        "--restored", &s(&pair.join("sharp.pfmx")),
        "--truth", &s(&pair.join("sharp.pfmx")),
        "--kernel-est", &s(&pair.join("kernel.txt")),
        "--kernel-gt", &s(&pair.join("kernel.txt")),
        "--out-dir", &s(&dir),
        "--error-ratio", "--blurry", &s(&pair.join("blurry.pfmx")),
        "--iters", "10",
    ]);
    assert_status(&out, 0, "eval");

    let text = std::fs::read_to_string(dir.join("metrics.txt")).unwrap();
    let field = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap_or_else(|| panic!("{key} missing in {text}"))
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(field("psnr_db"), 300.0, "identical images hit the PSNR ceiling");
    assert_eq!(field("ssim"), 1.0);
    assert_eq!(field("kernel_mse"), 0.0);
    assert_eq!(field("error_ratio"), 1.0, "true kernel restores exactly as well as itself");

    // Shape mismatch is a usage error.
    let out = run(&[
        "eval",
        "--restored", &s(&pair.join("blurry.pfmx")),
        "--truth", &s(&pair.join("sharp.pfmx")),
        "--kernel-est", &s(&pair.join("kernel.txt")),
        "--kernel-gt", &s(&pair.join("kernel.txt")),
        "--out-dir", &s(&dir),
    ]);
    assert_status(&out, 2, "shape mismatch");
}

#[test]
fn bench_tabulates_pairs_and_is_thread_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let sharp = write_sharp(tmp.path(), 24, 24);
    let dataset = tmp.path().join("dataset");
    for (name, seed) in [("p0", "6"), ("p1", "7")] {
        let out = run(&[
            "synth", "--input", &s(&sharp), "--out-dir", &s(&dataset.join(name)),
            "--kernel-size", "3", "--walk-steps", "40", "--step-std", "0.6",
            "--sigma", "0.01", "--seed", seed,
        ]);
        assert_status(&out, 0, "synth");
    }

    let run_bench = |threads: &str, dir: &Path| {
        let out = bin()
            .env("SELFDEBLUR_THREADS", threads)
            .args([
                "bench", "--dataset", &s(&dataset), "--out-dir", &s(dir),
                "--mode", "both", "--preset", "desk", "--iters", "6", "--deterministic",
            ])
            .output()
            .expect("binary runs");
        assert_status(&out, 0, "bench");
        std::fs::read_to_string(dir.join("bench.csv")).unwrap()
    };
    let csv1 = run_bench("1", &tmp.path().join("bench1"));
    let csv2 = run_bench("2", &tmp.path().join("bench2"));
    assert_eq!(csv1, csv2, "worker count must not change deterministic output");

    let table = BenchTable::from_csv(&csv1).unwrap();
    assert_eq!(table.rows.len(), 4, "two pairs x two modes");
    assert_eq!(csv1.lines().count(), 4 + 2, "header + rows + mean");
    let mean = table.summary();
    let by_hand: f64 = table.rows.iter().map(|r| r.psnr).sum::<f64>() / 4.0;
    assert!((mean.psnr - by_hand).abs() < 1e-9);

    // An empty dataset directory is a usage error.
    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let out = run(&["bench", "--dataset", &s(&empty), "--out-dir", &s(&tmp.path().join("x"))]);
    assert_status(&out, 2, "empty dataset");
}

#[test]
fn exit_statuses_cover_the_contract() {
    let tmp = tempfile::tempdir().unwrap();

    // 2: unreadable input.
    let out = run(&[
        "deblur", "--input", &s(&tmp.path().join("missing.pgm")),
        "--out-dir", &s(&tmp.path().join("o")), "--kernel-size", "3",
    ]);
    assert_status(&out, 2, "missing input");

    // 2: even kernel size.
    let sharp = write_sharp(tmp.path(), 20, 20);
    let out = run(&[
        "deblur", "--input", &s(&sharp), "--out-dir", &s(&tmp.path().join("o")),
        "--kernel-size", "4",
    ]);
    assert_status(&out, 2, "even kernel");

    // 3: divergence, with a partial manifest naming the iteration.
    let div = tmp.path().join("div");
    let out = run(&[
        "deblur", "--input", &s(&sharp), "--out-dir", &s(&div),
        "--kernel-size", "3", "--preset", "desk", "--iters", "10",
        "--lambda", "1e300", "--deterministic",
    ]);
    assert_status(&out, 3, "divergence");
    let manifest = Manifest::read(&div.join("manifest.txt")).unwrap();
    assert_eq!(manifest.exit_status, 3);
    assert_eq!(manifest.diverged_at, Some(1));
    assert!(!manifest.losses.is_empty(), "the offending loss is recorded");

    // 1: a failed verification suite.
    let out = run(&["verify", "--suite", "gradcheck", "--inject-fault", "grad-sign-flip"]);
    assert_status(&out, 1, "injected fault");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fault-fixture"), "the failing check is named:\n{stdout}");

    // 0: a passing verification suite, and unknown suites are usage errors.
    let out = run(&["verify", "--suite", "schedule"]);
    assert_status(&out, 0, "schedule suite");
    let out = run(&["verify", "--suite", "no-such-suite"]);
    assert_status(&out, 2, "unknown suite");
}
