//! Blind image deblurring driven by a sparsity prior on patch-wise minimal
//! pixels.

pub mod bench;
pub mod config;
pub mod error;
pub mod fft;
pub mod hqs;
pub mod image;
pub mod io;
pub mod kernel_est;
pub mod latent;
pub mod metrics;
pub mod multiscale;
pub mod nonblind;
pub mod ops;
pub mod pmp;
pub mod synth;

pub use crate::error::{DeblurError, Result};
pub use crate::image::{Image, Kernel, Plane};
