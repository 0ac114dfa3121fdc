//! Hyperspectral image recovery from RGB images.
//!
//! Training clusters hyperspectral patches with K-Means and, for every
//! cluster, infers a set of Gaussian Processes over spectral signatures with
//! a Gibbs sampler on a weighted Beta-Bernoulli representation model. The
//! posterior means are projected through the camera's spectral response `T`
//! and stored with RGB patch centroids.
//!
//! Reconstruction assigns each overlapping RGB patch to its nearest centroid,
//! codes every pixel with a non-negative minimum-l1 solver against the
//! projected means, and maps the code back through the hyperspectral means.
//! Overlapping estimates are averaged.
//!
//! ```no_run
//! use hsgp::{cubeio, pipeline, config::TrainConfig};
//!
//! let train = cubeio::read_cube("scene.hsc")?;
//! let (t, _grid) = cubeio::read_response("camera.csv", false)?;
//! let model = pipeline::train(&[train], &t, &TrainConfig::default())?;
//! let rgb = cubeio::read_cube("photo.hsc")?;
//! let out = pipeline::reconstruct(&model, &rgb, 2)?;
//! cubeio::write_cube(&out.cube, "recovered.hsc")?;
//! # Ok::<(), hsgp::Error>(())
//! ```

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coder;
pub mod config;
pub mod cube;
pub mod cubeio;
mod error;
pub mod gpmodel;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod priors;
pub mod rng;
pub mod synth;

pub use cube::{apply_transform, HyperCube, Patch, SpectralTransform};
pub use error::{Error, ErrorKind, Result};
