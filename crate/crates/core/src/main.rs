//! Command-line front end: `deblur` (the estimator), `synth` (dataset
//! construction), `eval` (metrics), `bench` (dataset sweeps) and `verify`
//! (the numeric self-checks).
//!
//! Exit statuses: 0 success, 1 verification failure, 2 usage or input
//! error, 3 numerical divergence. All file output lands under `--out-dir`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use selfdeblur::data::{self, SynthSpec};
use selfdeblur::io;
use selfdeblur::metrics::{self, MetricsReport};
use selfdeblur::model::{lambda_from_sigma, LossBreakdown};
use selfdeblur::report::{BenchRow, BenchTable, LambdaSource, Manifest, SnapshotRef};
use selfdeblur::solver::{self, Mode, RunConfig, RunReport};
use selfdeblur::tensor::Tensor;
use selfdeblur::verify::{self, Fault};
use selfdeblur::{Error, Result};

#[derive(Parser)]
#[command(
    name = "selfdeblur",
    version,
    about = "Single-image blind deconvolution with untrained generator networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate a sharp image and blur kernel from one blurry image.
    Deblur(DeblurArgs),
    /// Blur a sharp image with a synthetic random-walk kernel.
    Synth(SynthArgs),
    /// Score a restoration against ground truth.
    Eval(EvalArgs),
    /// Run the estimator over a dataset directory and tabulate metrics.
    Bench(BenchArgs),
    /// Run the numeric self-check suites.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Joint,
    Alternating,
    FixedKernel,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Joint => Mode::Joint,
            ModeArg::Alternating => Mode::Alternating,
            ModeArg::FixedKernel => Mode::FixedKernel,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchModeArg {
    Joint,
    Alternating,
    FixedKernel,
    /// Joint and alternating, paired per image.
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Benchmark-scale networks and 5000 iterations.
    Full,
    /// Reduced networks and 1500 iterations; minutes, not hours, on a CPU.
    Desk,
}

/// `--sigma` accepts a noise level or `auto` for blind estimation.
#[derive(Clone, Copy, Debug)]
enum SigmaArg {
    Auto,
    Value(f64),
}

fn parse_sigma(s: &str) -> std::result::Result<SigmaArg, String> {
    if s == "auto" {
        return Ok(SigmaArg::Auto);
    }
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(SigmaArg::Value(v)),
        _ => Err(format!("expected `auto` or a non-negative number, got {s:?}")),
    }
}

#[derive(Args)]
struct DeblurArgs {
    /// Blurry input image (PGM, PPM or PFMX).
    #[arg(long)]
    input: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out_dir: PathBuf,
    /// Blur kernel side length (odd).
    #[arg(long)]
    kernel_size: usize,
    /// Noise level for the regularization weight, or `auto` to estimate it.
    #[arg(long, value_parser = parse_sigma, default_value = "auto")]
    sigma: SigmaArg,
    /// Regularization weight; overrides the sigma rule.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, value_enum, default_value = "joint")]
    mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record wall time as zero so outputs are byte-identical across runs.
    #[arg(long)]
    deterministic: bool,
    /// Iterations at which to save intermediate images.
    #[arg(long, value_delimiter = ',')]
    snapshot_iters: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "full")]
    preset: Preset,
    /// Known kernel, required in fixed-kernel mode.
    #[arg(long)]
    kernel_file: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Sharp source image.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    kernel_size: usize,
    /// Random-walk steps for the kernel trajectory; 0 gives a delta.
    #[arg(long, default_value_t = 200)]
    walk_steps: usize,
    /// Per-step standard deviation in pixels.
    #[arg(long, default_value_t = 0.7)]
    step_std: f64,
    /// Additive noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Restored image to score.
    #[arg(long)]
    restored: PathBuf,
    /// Ground-truth sharp image.
    #[arg(long)]
    truth: PathBuf,
    /// Estimated kernel.
    #[arg(long)]
    kernel_est: PathBuf,
    /// Ground-truth kernel.
    #[arg(long)]
    kernel_gt: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also compute the restoration error ratio (runs two fixed-kernel
    /// restorations; needs --blurry).
    #[arg(long)]
    error_ratio: bool,
    /// Blurry observation, required with --error-ratio.
    #[arg(long)]
    blurry: Option<PathBuf>,
    /// Iterations for the error-ratio restorations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of dataset pairs (one subdirectory per pair).
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "joint")]
    mode: BenchModeArg,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    deterministic: bool,
    /// Also compute error ratios (two extra restorations per pair).
    #[arg(long)]
    error_ratio: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run a single suite instead of all of them.
    #[arg(long)]
    suite: Option<String>,
    /// Test fixture: inject a known defect to prove the checks can fail.
    #[arg(long, hide = true, value_parser = parse_fault)]
    inject_fault: Option<Fault>,
}

fn parse_fault(s: &str) -> std::result::Result<Fault, String> {
    match s {
        "grad-sign-flip" => Ok(Fault::GradSignFlip),
        other => Err(format!("unknown fault {other:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match cli.cmd {
        Cmd::Deblur(a) => cmd_deblur(a),
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Verify(a) => cmd_verify(a),
    };
    match run {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// deblur
// ---------------------------------------------------------------------------

fn base_config(preset: Preset, kernel_size: usize, channels: usize) -> RunConfig {
    match preset {
        Preset::Full => RunConfig::full(kernel_size, channels),
        Preset::Desk => RunConfig::desk(kernel_size, channels),
    }
}

/// Resolve the regularization weight: an explicit `--lambda` wins, then a
/// numeric `--sigma`, then blind estimation from the input.
fn resolve_lambda(
    lambda: Option<f64>,
    sigma: SigmaArg,
    y: &Tensor<f32>,
) -> (f64, LambdaSource, Option<f64>) {
    match (lambda, sigma) {
        (Some(l), SigmaArg::Value(s)) => (l, LambdaSource::Flag, Some(s)),
        (Some(l), SigmaArg::Auto) => (l, LambdaSource::Flag, None),
        (None, SigmaArg::Value(s)) => (lambda_from_sigma(s), LambdaSource::SigmaFlag, Some(s)),
        (None, SigmaArg::Auto) => {
            let s = data::estimate_sigma(y);
            (lambda_from_sigma(s), LambdaSource::SigmaEstimated, Some(s))
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write an image as an 8-bit PGM/PPM plus an exact float container;
/// returns the 8-bit file name.
fn write_image_outputs(dir: &Path, stem: &str, img: &Tensor<f32>) -> Result<String> {
    let channels = img.dims3().0;
    let name8 = format!("{stem}.{}", if channels == 3 { "ppm" } else { "pgm" });
    io::write_image_8bit(&dir.join(&name8), img)?;
    io::write_image_float(&dir.join(format!("{stem}.pfmx")), img)?;
    Ok(name8)
}

fn write_run_outputs(out_dir: &Path, report: &RunReport<f32>) -> Result<Vec<SnapshotRef>> {
    io::write_kernel(&out_dir.join("kernel.txt"), &report.kernel)?;
    write_image_outputs(out_dir, "restored", &report.image)?;
    let mut refs = Vec::new();
    for snap in &report.snapshots {
        let image = write_image_outputs(out_dir, &format!("snapshot_{:06}", snap.iter), &snap.image)?;
        let kernel = format!("snapshot_{:06}_kernel.txt", snap.iter);
        io::write_kernel(&out_dir.join(&kernel), &snap.kernel)?;
        refs.push(SnapshotRef { iter: snap.iter, image, kernel });
    }
    Ok(refs)
}

fn cmd_deblur(args: DeblurArgs) -> Result<ExitCode> {
    if args.kernel_size % 2 == 0 || args.kernel_size == 0 {
        return Err(Error::Config(format!("kernel size must be odd, got {}", args.kernel_size)));
    }
    let y: Tensor<f32> = io::read_image(&args.input)?;
    let (c, h, w) = y.dims3();
    if h <= args.kernel_size || w <= args.kernel_size {
        return Err(Error::Config(format!(
            "input {h}x{w} must exceed the {0}x{0} kernel",
            args.kernel_size
        )));
    }
    let mut cfg = base_config(args.preset, args.kernel_size, c);
    cfg.mode = args.mode.into();
    cfg.seed = args.seed;
    if let Some(iters) = args.iters {
        cfg.iters = iters;
    }
    if let Some(snaps) = args.snapshot_iters {
        cfg.snapshot_iters = snaps;
    }
    let (lambda, lambda_source, sigma) = resolve_lambda(args.lambda, args.sigma, &y);
    cfg.lambda = lambda;
    if let Some(s) = sigma {
        println!("sigma {s:.5} -> lambda {lambda:.3e}");
    }

    let fixed_kernel = match (cfg.mode, &args.kernel_file) {
        (Mode::FixedKernel, Some(path)) => {
            let k: Tensor<f32> = io::read_kernel(path)?;
            if k.dims2().0 != args.kernel_size {
                return Err(Error::Config(format!(
                    "--kernel-file is {}x{0} but --kernel-size is {1}",
                    k.dims2().0,
                    args.kernel_size
                )));
            }
            Some(k)
        }
        (Mode::FixedKernel, None) => {
            return Err(Error::Config("fixed-kernel mode needs --kernel-file".into()))
        }
        (_, Some(_)) => {
            return Err(Error::Config("--kernel-file only applies to fixed-kernel mode".into()))
        }
        _ => None,
    };

    ensure_out_dir(&args.out_dir)?;
    let every = (cfg.iters / 10).max(1);
    let total = cfg.iters;
    let mut progress = |t: usize, loss: &LossBreakdown| {
        if t == 1 || t == total || t % every == 0 {
            println!("iter {t:>5}/{total}  loss {:.6e}  (fidelity {:.3e}, tv {:.3e})", loss.total, loss.fidelity, loss.tv);
        }
    };
    let report = solver::run(&y, fixed_kernel.as_ref(), &cfg, &mut progress)?;

    let snapshots = write_run_outputs(&args.out_dir, &report)?;
    let exit_status = if report.diverged_at.is_some() { 3 } else { 0 };
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config: cfg,
        lambda_source,
        sigma,
        losses: report.losses.clone(),
        snapshots,
        gradient_evals: report.gradient_evals,
        wall_secs: if args.deterministic { 0.0 } else { report.wall_secs },
        exit_status,
        diverged_at: report.diverged_at,
    };
    manifest.write(&args.out_dir.join("manifest.txt"))?;

    if let Some(t) = report.diverged_at {
        eprintln!("diverged at iteration {t}; wrote the last finite state");
        return Ok(ExitCode::from(3));
    }
    println!("wrote {}", args.out_dir.join("manifest.txt").display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<ExitCode> {
    let x: Tensor<f32> = io::read_image(&args.input)?;
    let spec = SynthSpec {
        kernel_size: args.kernel_size,
        walk_steps: args.walk_steps,
        step_std: args.step_std,
        sigma: args.sigma,
        seed: args.seed,
    };
    let pair = data::synth_pair(&x, &spec)?;
    data::save_pair(&pair, &args.out_dir, Some(args.seed))?;
    println!("wrote pair to {}", args.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn metrics_text(m: &MetricsReport) -> String {
    let mut out = format!(
        "psnr_db={}\nssim={}\nkernel_mse={}\nshift={} {}\n",
        m.psnr, m.ssim, m.kernel_mse, m.shift.0, m.shift.1
    );
    if let Some(r) = m.error_ratio {
        out.push_str(&format!("error_ratio={r}\n"));
    }
    out
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let x_est: Tensor<f32> = io::read_image(&args.restored)?;
    let x_gt: Tensor<f32> = io::read_image(&args.truth)?;
    if x_est.shape() != x_gt.shape() {
        return Err(Error::Config(format!(
            "restored image is {:?} but ground truth is {:?}",
            x_est.shape(),
            x_gt.shape()
        )));
    }
    let k_est: Tensor<f32> = io::read_kernel(&args.kernel_est)?;
    let k_gt: Tensor<f32> = io::read_kernel(&args.kernel_gt)?;
    if k_est.dims2().0 % 2 != k_gt.dims2().0 % 2 {
        return Err(Error::Config(format!(
            "kernel sizes {} and {} differ in parity; centers cannot align",
            k_est.dims2().0,
            k_gt.dims2().0
        )));
    }
    let border = k_gt.dims2().0.div_ceil(2);
    let mut report = metrics::evaluate(&x_est, &x_gt, &k_est, &k_gt, border);

    if args.error_ratio {
        let blurry = args
            .blurry
            .as_ref()
            .ok_or_else(|| Error::Config("--error-ratio needs --blurry".into()))?;
        let y: Tensor<f32> = io::read_image(blurry)?;
        let mut cfg = RunConfig::desk(k_gt.dims2().0, x_gt.dims3().0);
        cfg.seed = args.seed;
        if let Some(iters) = args.iters {
            cfg.iters = iters;
        }
        report.error_ratio = Some(metrics::error_ratio(&y, &k_est, &k_gt, &x_gt, &cfg)?);
    }

    let text = metrics_text(&report);
    print!("{text}");
    ensure_out_dir(&args.out_dir)?;
    let path = args.out_dir.join("metrics.txt");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("SELFDEBLUR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

struct BenchJob {
    id: String,
    mode: Mode,
    pair: data::DatasetPair<f32>,
}

fn bench_one(job: &BenchJob, args: &BenchArgs) -> Result<BenchRow> {
    let k = job.pair.k_gt.dims2().0;
    let c = job.pair.x_gt.dims3().0;
    let mut cfg = base_config(args.preset, k, c);
    cfg.mode = job.mode;
    cfg.seed = args.seed;
    if let Some(iters) = args.iters {
        cfg.iters = iters;
    }
    cfg.lambda = args.lambda.unwrap_or_else(|| lambda_from_sigma(job.pair.sigma));
    cfg.snapshot_iters.clear();
    let fixed = (job.mode == Mode::FixedKernel).then_some(&job.pair.k_gt);
    let report = solver::run(&job.pair.y, fixed, &cfg, &mut |_, _| {})?;
    if let Some(t) = report.diverged_at {
        return Err(Error::Diverged { iter: t });
    }
    let border = k.div_ceil(2);
    let mut m = metrics::evaluate(&report.image, &job.pair.x_gt, &report.kernel, &job.pair.k_gt, border);
    if args.error_ratio {
        m.error_ratio = Some(metrics::error_ratio(
            &job.pair.y,
            &report.kernel,
            &job.pair.k_gt,
            &job.pair.x_gt,
            &cfg,
        )?);
    }
    Ok(BenchRow {
        id: job.id.clone(),
        mode: mode_label(job.mode).into(),
        psnr: m.psnr,
        ssim: m.ssim,
        kernel_mse: m.kernel_mse,
        error_ratio: m.error_ratio,
        final_loss: report.final_loss.total,
        wall_secs: if args.deterministic { 0.0 } else { report.wall_secs },
    })
}

fn mode_label(m: Mode) -> &'static str {
    match m {
        Mode::Joint => "joint",
        Mode::Alternating => "alternating",
        Mode::FixedKernel => "fixed-kernel",
    }
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    let mut pair_dirs: Vec<PathBuf> = std::fs::read_dir(&args.dataset)
        .map_err(|e| Error::io(&args.dataset, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join(data::BLURRY_FILE).is_file())
        .collect();
    pair_dirs.sort();
    if pair_dirs.is_empty() {
        return Err(Error::Config(format!(
            "no dataset pairs under {} (expected subdirectories with {})",
            args.dataset.display(),
            data::BLURRY_FILE
        )));
    }
    let modes: &[Mode] = match args.mode {
        BenchModeArg::Joint => &[Mode::Joint],
        BenchModeArg::Alternating => &[Mode::Alternating],
        BenchModeArg::FixedKernel => &[Mode::FixedKernel],
        BenchModeArg::Both => &[Mode::Joint, Mode::Alternating],
    };
    let mut jobs = Vec::new();
    for dir in &pair_dirs {
        let pair = data::load_pair::<f32>(dir)?;
        let id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        for &mode in modes {
            jobs.push(BenchJob { id: id.clone(), mode, pair: pair.clone() });
        }
    }

    let workers = worker_count(jobs.len());
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<Result<BenchRow>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let row = bench_one(&jobs[i], &args);
                rows.lock().expect("bench results lock")[i] = Some(row);
            });
        }
    });
    let mut table = BenchTable::default();
    for slot in rows.into_inner().expect("bench results lock") {
        table.rows.push(slot.expect("every job ran")?);
    }

    let csv = table.to_csv();
    print!("{csv}");
    ensure_out_dir(&args.out_dir)?;
    let path = args.out_dir.join("bench.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let fault = args.inject_fault.unwrap_or(Fault::None);
    let started = Instant::now();
    let reports = match &args.suite {
        Some(name) => vec![verify::run_suite(name, fault)?],
        None => verify::all_suites(fault),
    };
    let mut all_passed = true;
    for report in &reports {
        let status = if report.passed() { "PASS" } else { "FAIL" };
        println!("suite {:<12} {status}  ({} checks, {:.2}s)", report.name, report.checks.len(), report.wall_secs);
        for check in &report.checks {
            if !check.passed {
                println!("  FAIL {}: {}", check.name, check.detail);
            }
        }
        all_passed &= report.passed();
    }
    println!(
        "verification {} in {:.2}s",
        if all_passed { "passed" } else { "FAILED" },
        started.elapsed().as_secs_f64()
    );
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
