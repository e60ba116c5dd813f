// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod attack;
pub mod audio_io;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod spectral;
pub mod synth;
pub mod tensorfile;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
