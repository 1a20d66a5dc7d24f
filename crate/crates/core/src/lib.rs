//! Framelet-pooled learning for undersampled image reconstruction.
//!
//! The crate bundles everything needed to compare direct learning on full
//! resolution images against learning on framelet packet subbands:
//!
//! * [`filterbank`]: tight-frame filter banks (Haar, Db4, piecewise-linear
//!   B-spline) and a numerical unitary-extension-principle check.
//! * [`framelet`]: the multi-level packet decomposition and its adjoint.
//! * [`mri`] and [`ct`]: forward models that turn clean phantoms into aliased
//!   or streaked training inputs.
//! * [`nn`]: a small reverse-mode network stack and the U-net family.
//! * [`metrics`]: MSE, PSNR and SSIM.
//! * [`pipeline`]: dataset generation, training, evaluation, benchmarking and
//!   the on-disk formats used by the `framepool` binary.

pub mod ct;
pub mod error;
pub mod filterbank;
pub mod framelet;
pub mod image;
pub mod metrics;
pub mod mri;
pub mod nn;
pub mod phantom;
pub mod pipeline;

pub use error::{Error, Result};
pub use image::Image;
