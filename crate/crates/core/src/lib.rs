//! Domain-generalized textured-surface anomaly detection.
//!
//! Trains a patch-comparison model episodically across several source texture
//! domains and applies it, without fine-tuning, to an unseen target domain
//! where only a handful of normal images are available as references. The
//! model scores each query patch against reference patches (image-level
//! detection) and scatters those scores back onto the pixel grid
//! (localization).

pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod comparer;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod fid;
pub mod inference;
mod kernels;
pub mod model;
pub mod mvtec;
pub mod optim;
pub mod params;
pub mod plot;
pub mod pyramid;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
