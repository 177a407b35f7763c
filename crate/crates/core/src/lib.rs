//! Toolkit for building and validating low-light noisy/clean image-pair
//! datasets.
//!
//! The crate is organised bottom-up:
//!
//! - [`raster`]: channel planes, masks, separable Gaussian blur, gradients,
//!   percentiles and masked difference statistics.
//! - [`codec`]: binary PNM (P6, 8/16-bit) reader/writer and a 24-bit BMP writer.
//! - [`alignment`]: 16-bit to 8-bit intensity alignment with a percentile
//!   anchor for the reference and golden-section gain estimation for the
//!   remaining images.
//! - [`noise`]: noise-level estimators built on the variance identity for
//!   independent noises, binned noise curves, an affine variance model and
//!   the clean-pair quality gate.
//! - [`metrics`]: PSNR (MSE based and noise-estimate based) and SSIM.
//! - [`harness`]: batch pipeline, synthetic and calibration validation,
//!   denoiser evaluation and plot-data emission.
//!
//! Heavy per-row loops run on rayon when the `parallel` feature is enabled
//! (the default). Every reduction is performed in a fixed order, so results
//! are bit-identical between the parallel and sequential paths.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod codec;
pub mod error;
pub mod exec;
pub mod harness;
pub mod metrics;
pub mod noise;
pub mod optimize;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
pub use raster::{Domain, MultiImage, PixelMask, RasterPlane, Rect};
pub use scene::SceneBundle;
