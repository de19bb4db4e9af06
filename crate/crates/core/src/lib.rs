//! Image restoration with a diffusion prior and per-pixel noise precision
//! estimated by variational inference at every reverse step.

// `!(v > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod degrade;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod restoration;
pub mod rng;
pub mod special;
pub mod variational;

pub use error::{Error, Result};
pub use image::ImageField;
