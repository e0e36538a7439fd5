//! Structured run outputs: the per-run manifest and the benchmark table.
//! Both are line-oriented text — `key=value` for the manifest, CSV for the
//! table — with floats printed in shortest-round-trip form so a write/read
//! cycle reproduces the exact values.

use std::path::Path;

use crate::generators::{GkConfig, GxConfig};
use crate::kernels::BlurBackend;
use crate::model::LossBreakdown;
use crate::solver::{Mode, RunConfig};
use crate::{Error, Result};

/// Where the regularization weight came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaSource {
    /// `--lambda` given directly.
    Flag,
    /// Derived from a user-supplied `--sigma` value.
    SigmaFlag,
    /// Derived from the wavelet-MAD noise estimate.
    SigmaEstimated,
}

impl LambdaSource {
    fn as_str(self) -> &'static str {
        match self {
            LambdaSource::Flag => "flag",
            LambdaSource::SigmaFlag => "sigma-flag",
            LambdaSource::SigmaEstimated => "sigma-estimated",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "flag" => Some(LambdaSource::Flag),
            "sigma-flag" => Some(LambdaSource::SigmaFlag),
            "sigma-estimated" => Some(LambdaSource::SigmaEstimated),
            _ => None,
        }
    }
}

/// One recorded snapshot: iteration plus the files it was written to
/// (paths relative to the manifest's directory).
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRef {
    pub iter: usize,
    pub image: String,
    pub kernel: String,
}

/// Everything needed to audit or reproduce one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub tool_version: String,
    pub config: RunConfig,
    pub lambda_source: LambdaSource,
    /// Noise level behind `lambda`, when one was known or estimated.
    pub sigma: Option<f64>,
    pub losses: Vec<LossBreakdown>,
    pub snapshots: Vec<SnapshotRef>,
    pub gradient_evals: usize,
    /// Recorded as zero under `--deterministic` so outputs stay
    /// byte-identical across runs.
    pub wall_secs: f64,
    pub exit_status: i32,
    pub diverged_at: Option<usize>,
}

fn mode_str(m: Mode) -> &'static str {
    match m {
        Mode::Joint => "joint",
        Mode::Alternating => "alternating",
        Mode::FixedKernel => "fixed-kernel",
    }
}

fn mode_parse(s: &str) -> Option<Mode> {
    match s {
        "joint" => Some(Mode::Joint),
        "alternating" => Some(Mode::Alternating),
        "fixed-kernel" => Some(Mode::FixedKernel),
        _ => None,
    }
}

fn backend_str(b: BlurBackend) -> &'static str {
    match b {
        BlurBackend::Auto => "auto",
        BlurBackend::Direct => "direct",
        BlurBackend::Fft => "fft",
    }
}

fn backend_parse(s: &str) -> Option<BlurBackend> {
    match s {
        "auto" => Some(BlurBackend::Auto),
        "direct" => Some(BlurBackend::Direct),
        "fft" => Some(BlurBackend::Fft),
        _ => None,
    }
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|t| t.parse().ok()).collect()
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("tool_version", self.tool_version.clone());
        kv("mode", mode_str(c.mode).into());
        kv("iters", c.iters.to_string());
        kv("lr", c.lr.to_string());
        kv("milestones", join(&c.milestones));
        kv("lr_decay", c.lr_decay.to_string());
        kv("lambda", c.lambda.to_string());
        kv("lambda_source", self.lambda_source.as_str().into());
        if let Some(s) = self.sigma {
            kv("sigma", s.to_string());
        }
        kv("seed", c.seed.to_string());
        kv("kernel_size", c.gk.kernel_size.to_string());
        kv("snapshot_iters", join(&c.snapshot_iters));
        kv("backend", backend_str(c.backend).into());
        kv(
            "gx",
            format!(
                "levels:{};down:{};up:{};skip:{};z:{};out:{};k:{}",
                c.gx.levels,
                join(&c.gx.ch_down),
                join(&c.gx.ch_up),
                join(&c.gx.ch_skip),
                c.gx.z_channels,
                c.gx.out_channels,
                c.gx.conv_kernel
            ),
        );
        kv("gk", format!("z:{};hidden:{};k:{}", c.gk.z_dim, join(&c.gk.hidden), c.gk.kernel_size));
        kv("gradient_evals", self.gradient_evals.to_string());
        kv("wall_secs", self.wall_secs.to_string());
        kv("exit_status", self.exit_status.to_string());
        if let Some(t) = self.diverged_at {
            kv("diverged_at", t.to_string());
        }
        for (i, l) in self.losses.iter().enumerate() {
            kv("loss", format!("{} {} {} {}", i + 1, l.fidelity, l.tv, l.total));
        }
        for s in &self.snapshots {
            kv("snapshot", format!("{} {} {}", s.iter, s.image, s.kernel));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|msg| Error::parse(path, msg))
    }

    pub fn from_text(text: &str) -> std::result::Result<Manifest, String> {
        let mut fields = std::collections::HashMap::new();
        let mut losses = Vec::new();
        let mut snapshots = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", ln + 1))?;
            match key {
                "loss" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 4 {
                        return Err(format!("line {}: loss needs 4 fields", ln + 1));
                    }
                    let t: usize = parts[0].parse().map_err(|_| format!("line {}: bad iteration", ln + 1))?;
                    if t != losses.len() + 1 {
                        return Err(format!("line {}: loss index {t} out of order", ln + 1));
                    }
                    let num =
                        |s: &str| s.parse::<f64>().map_err(|_| format!("line {}: bad number {s:?}", ln + 1));
                    losses.push(LossBreakdown {
                        fidelity: num(parts[1])?,
                        tv: num(parts[2])?,
                        lambda: 0.0, // set after the header fields are known
                        total: num(parts[3])?,
                    });
                }
                "snapshot" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(format!("line {}: snapshot needs 3 fields", ln + 1));
                    }
                    snapshots.push(SnapshotRef {
                        iter: parts[0].parse().map_err(|_| format!("line {}: bad iteration", ln + 1))?,
                        image: parts[1].into(),
                        kernel: parts[2].into(),
                    });
                }
                _ => {
                    if fields.insert(key.to_string(), value.to_string()).is_some() {
                        return Err(format!("line {}: duplicate key {key}", ln + 1));
                    }
                }
            }
        }
        let take = |k: &str| fields.get(k).cloned().ok_or_else(|| format!("missing key {k}"));
        let num = |k: &str| -> std::result::Result<f64, String> {
            take(k)?.parse().map_err(|_| format!("bad number for {k}"))
        };
        let int = |k: &str| -> std::result::Result<usize, String> {
            take(k)?.parse().map_err(|_| format!("bad integer for {k}"))
        };
        let gx = parse_gx(&take("gx")?)?;
        let gk = parse_gk(&take("gk")?)?;
        if gk.kernel_size != int("kernel_size")? {
            return Err("kernel_size disagrees with the gk echo".into());
        }
        let lambda = num("lambda")?;
        let config = RunConfig {
            mode: mode_parse(&take("mode")?).ok_or("bad mode")?,
            iters: int("iters")?,
            lr: num("lr")?,
            milestones: split_list(&take("milestones")?).ok_or("bad milestones")?,
            lr_decay: num("lr_decay")?,
            lambda,
            seed: take("seed")?.parse().map_err(|_| "bad seed")?,
            snapshot_iters: split_list(&take("snapshot_iters")?).ok_or("bad snapshot_iters")?,
            backend: backend_parse(&take("backend")?).ok_or("bad backend")?,
            gx,
            gk,
        };
        for l in &mut losses {
            l.lambda = lambda;
        }
        Ok(Manifest {
            tool_version: take("tool_version")?,
            config,
            lambda_source: LambdaSource::parse(&take("lambda_source")?).ok_or("bad lambda_source")?,
            sigma: fields.get("sigma").map(|s| s.parse().map_err(|_| "bad sigma")).transpose()?,
            losses,
            snapshots,
            gradient_evals: int("gradient_evals")?,
            wall_secs: num("wall_secs")?,
            exit_status: take("exit_status")?.parse().map_err(|_| "bad exit_status")?,
            diverged_at: fields.get("diverged_at").map(|s| s.parse().map_err(|_| "bad diverged_at")).transpose()?,
        })
    }
}

fn parse_kv_fields(s: &str) -> std::result::Result<std::collections::HashMap<String, String>, String> {
    let mut map = std::collections::HashMap::new();
    for part in s.split(';') {
        let (k, v) = part.split_once(':').ok_or_else(|| format!("bad field {part:?}"))?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

fn parse_gx(s: &str) -> std::result::Result<GxConfig, String> {
    let f = parse_kv_fields(s)?;
    let get = |k: &str| f.get(k).cloned().ok_or_else(|| format!("gx echo missing {k}"));
    Ok(GxConfig {
        levels: get("levels")?.parse().map_err(|_| "bad gx levels")?,
        ch_down: split_list(&get("down")?).ok_or("bad gx down")?,
        ch_up: split_list(&get("up")?).ok_or("bad gx up")?,
        ch_skip: split_list(&get("skip")?).ok_or("bad gx skip")?,
        z_channels: get("z")?.parse().map_err(|_| "bad gx z")?,
        out_channels: get("out")?.parse().map_err(|_| "bad gx out")?,
        conv_kernel: get("k")?.parse().map_err(|_| "bad gx k")?,
    })
}

fn parse_gk(s: &str) -> std::result::Result<GkConfig, String> {
    let f = parse_kv_fields(s)?;
    let get = |k: &str| f.get(k).cloned().ok_or_else(|| format!("gk echo missing {k}"));
    Ok(GkConfig {
        z_dim: get("z")?.parse().map_err(|_| "bad gk z")?,
        hidden: split_list(&get("hidden")?).ok_or("bad gk hidden")?,
        kernel_size: get("k")?.parse().map_err(|_| "bad gk k")?,
    })
}

// ---------------------------------------------------------------------------
// benchmark table
// ---------------------------------------------------------------------------

/// One benchmark result row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub id: String,
    pub mode: String,
    pub psnr: f64,
    pub ssim: f64,
    pub kernel_mse: f64,
    pub error_ratio: Option<f64>,
    pub final_loss: f64,
    pub wall_secs: f64,
}

/// Per-pair rows plus a computed mean row, rendered as CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

const CSV_HEADER: &str = "id,mode,psnr_db,ssim,kernel_mse,error_ratio,final_loss,wall_secs";

impl BenchTable {
    /// Arithmetic means over the rows; the error-ratio mean covers only
    /// rows that have one and is empty if none do.
    pub fn summary(&self) -> BenchRow {
        let n = self.rows.len() as f64;
        let mean = |f: fn(&BenchRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        let ratios: Vec<f64> = self.rows.iter().filter_map(|r| r.error_ratio).collect();
        BenchRow {
            id: "mean".into(),
            mode: "-".into(),
            psnr: mean(|r| r.psnr),
            ssim: mean(|r| r.ssim),
            kernel_mse: mean(|r| r.kernel_mse),
            error_ratio: if ratios.is_empty() {
                None
            } else {
                Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
            },
            final_loss: mean(|r| r.final_loss),
            wall_secs: mean(|r| r.wall_secs),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in self.rows.iter().chain(std::iter::once(&self.summary())) {
            let ratio = row.error_ratio.map(|r| r.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.id, row.mode, row.psnr, row.ssim, row.kernel_mse, ratio, row.final_loss, row.wall_secs
            ));
        }
        out
    }

    /// Parse a table written by [`to_csv`]; the trailing mean row is
    /// dropped (it is recomputed on demand).
    pub fn from_csv(text: &str) -> std::result::Result<BenchTable, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == CSV_HEADER => {}
            other => return Err(format!("bad header {other:?}")),
        }
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 8 {
                return Err(format!("line {}: expected 8 columns, got {}", ln + 2, parts.len()));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| format!("line {}: bad number {s:?}", ln + 2));
            rows.push(BenchRow {
                id: parts[0].into(),
                mode: parts[1].into(),
                psnr: num(parts[2])?,
                ssim: num(parts[3])?,
                kernel_mse: num(parts[4])?,
                error_ratio: if parts[5].is_empty() { None } else { Some(num(parts[5])?) },
                final_loss: num(parts[6])?,
                wall_secs: num(parts[7])?,
            });
        }
        let last = rows.pop().ok_or("table has no rows")?;
        if last.id != "mean" {
            return Err("missing mean row".into());
        }
        Ok(BenchTable { rows })
    }
}
