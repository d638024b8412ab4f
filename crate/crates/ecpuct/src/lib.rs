//! Eddy current pulse-compression thermography analysis.
//!
//! The library covers the full measurement chain for coded-excitation
//! induction thermography:
//!
//! * [`excitation`] — Barker-coded heating waveforms, matched filters, and
//!   their compression properties;
//! * [`datacube`] — thermal frame cubes, flattened pixel matrices, regions
//!   of interest, and the TCUBE/CSV file formats;
//! * [`pulsecomp`] — step-heating removal and pixel-wise pulse compression
//!   into impulse-response estimates;
//! * [`kpca`] — kernel principal component analysis over time frames for
//!   defect enhancement;
//! * [`lrs`] — low-rank plus factored-sparse decomposition with singular
//!   value thresholding;
//! * [`features`] — contrast SNR curves, crossing-point extraction, and
//!   depth-feature selection, plus material skin-depth helpers;
//! * [`synth`] — a finite-difference forward model producing synthetic
//!   inspection cubes with known notch geometry;
//! * [`linalg`] — the shared dense and iterative numerical kernels.

pub mod datacube;
pub mod error;
pub mod excitation;
pub mod features;
pub mod kpca;
pub mod linalg;
pub mod lrs;
pub mod pulsecomp;
pub mod synth;

pub use error::{Error, Result};
