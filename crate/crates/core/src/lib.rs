//! Core algorithms for harmonizing CT images acquired with different
//! reconstruction kernels.
//!
//! The crate is `no_std` (with `alloc`) and free of IO. It contains:
//!
//! * [`phantom`]: paired synthetic chest-phantom slices reconstructed with a
//!   smooth and a sharp simulated kernel.
//! * [`codec`]: a convolutional encoder-decoder mapping slices to a flat
//!   latent vector, trained with an L2 reconstruction loss.
//! * [`diffusion`]: a conditional DDPM in latent space that maps
//!   non-standard latents into the standard latent domain.
//! * [`radiomics`]: texture and intensity features over tumor ROIs.
//! * [`metrics`]: relative error, reproducibility counts and the
//!   concordance correlation coefficient.
//! * [`eval`]: the end-to-end standardization and evaluation of the
//!   three comparison conditions.
//!
//! File formats, checkpoints and the command line live in the `ctharm`
//! companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod codec;
pub mod diffusion;
mod error;
pub mod eval;
mod fft;
mod math;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod radiomics;
pub mod rng;

pub use error::{Error, Result};
pub use image::{ImageSlice, LabelMask, HU_MAX, HU_MIN};
