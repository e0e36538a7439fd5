//! Single-image blind deconvolution: recover a sharp image and the blur
//! kernel from one blurry observation, with no training data.
//!
//! Two small untrained networks are fitted directly to the observation: an
//! image generator (skip-connected encoder–decoder ending in a sigmoid) and a
//! kernel generator (fully connected net ending in a softmax, so the kernel
//! is non-negative and sums to one by construction). Both are optimized
//! jointly so that the generated kernel convolved with the generated image
//! reproduces the observation; the network structure itself supplies the
//! prior that favors natural images over noise.
//!
//! Module map:
//! - [`tensor`], [`tape`], [`kernels`]: dense tensors plus reverse-mode
//!   autodiff on a flat operation tape;
//! - [`generators`]: the image network `G_x` and kernel network `G_k`;
//! - [`model`]: blur observation model and the optimized objective;
//! - [`solver`]: ADAM loop with joint, alternating and fixed-kernel modes;
//! - [`metrics`]: PSNR, SSIM, aligned kernel error, restoration error ratio;
//! - [`data`]: synthetic blur pairs, noise-level estimation, pair datasets;
//! - [`io`]: the image, kernel and float-container file formats;
//! - [`report`]: run manifests and benchmark tables;
//! - [`verify`]: independent numeric oracles and the property suites run by
//!   `selfdeblur verify`.
//!
//! Conventions: images and kernels are [`tensor::Tensor`]s in channel-major
//! `C x H x W` layout with values nominally in `[0, 1]`; kernels are `K x K`
//! with odd `K`. Shape mismatches and violated numeric preconditions inside
//! the engine are programming errors and panic with both shapes in the
//! message; conditions reachable from user input (files, CLI arguments,
//! undersized images) surface as [`Error`].

pub mod data;
pub mod generators;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod solver;
pub mod tape;
pub mod tensor;
pub mod verify;

mod fft;

use std::path::PathBuf;

/// Errors reachable from user-supplied input or the environment.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("optimization diverged (non-finite loss) at iteration {iter}")]
    Diverged { iter: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), msg: msg.into() }
    }
}
