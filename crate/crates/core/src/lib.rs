//! Frequency-adaptive mixture-of-experts pan-sharpening.
//!
//! The crate bundles a small reverse-mode autograd engine ([`tensor`]), DCT
//! based frequency labels ([`dct`]), the network itself ([`model`]), its
//! training objective ([`losses`]), synthetic data ([`data`]), quality
//! metrics ([`metrics`]), the training loop ([`trainer`]) and the run
//! configuration ([`config`]).

pub mod config;
pub mod data;
pub mod dct;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod trainer;

pub use error::{FameError, Result};
