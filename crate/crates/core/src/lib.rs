//! Physics-based MR contrast synthesis and quantitative tissue-property mapping.
//!
//! Tissue property maps `(PD, T1, T2)` are the modality-shared representation:
//! any MPRAGE, spin-echo or FLAIR contrast follows from them through a closed
//! form signal equation and a choice of `(TE, TR, TI)`. The crate provides
//!
//! - [`signal`]: the signal equations and their analytic Jacobians,
//! - [`qmap`]: per-voxel MAP fitting of property maps under log-normal T1/T2
//!   priors, plus phantom generation and property histograms,
//! - [`fusion`]: product-of-experts fusion of diagonal Gaussians,
//! - [`nn`]: a small MLP with group normalization, adaptive group-norm
//!   conditioning, manual backpropagation and Adam,
//! - [`diffusion`]: a DDPM trainer and ancestral sampler over low-dimensional latents,
//! - [`metrics`]: MSE, MAE, PSNR, MS-SSIM and property-distribution validation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod diffusion;
pub mod error;
mod format;
pub mod fusion;
pub mod metrics;
pub mod nn;
pub mod qmap;
pub mod rng;
pub mod scaling;
pub mod signal;
pub mod volume;

pub use acquisition::{AcquisitionParams, SequenceKind};
pub use error::{Error, Result};
pub use scaling::{scale_to_unit, unscale, ScaleRecord};
pub use volume::{Property, PropertyMap, Volume};
