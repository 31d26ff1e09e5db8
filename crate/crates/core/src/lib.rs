//! Functional movement models for animal telemetry.
//!
//! A trajectory is modelled as white noise convolved with an integrated
//! kernel `h̃(t, τ)` evaluated over a fixed knot grid, optionally in a warped
//! time domain. The crate covers the whole batch workflow:
//!
//! * [`ingest`] loads and standardizes raw tracks,
//! * [`kernels`] evaluates the five kernel families and builds basis matrices,
//! * [`warp`] generates non-folding candidate warp fields,
//! * [`gauss`] evaluates the integrated Gaussian likelihood through the
//!   Woodbury identity and the matrix determinant lemma,
//! * [`mcmc`] fits one (kernel, warp) model,
//! * [`bma`] averages fitted models with the two-stage reversible-jump scheme,
//! * [`predict`] composition-samples latent paths,
//! * [`diagnostics`] computes empirical and residual variograms,
//! * [`sim`] generates synthetic tracks with known truth,
//! * [`io`] reads and writes the CSV interchange formats.

pub mod bma;
pub mod diagnostics;
pub mod error;
pub mod gauss;
pub mod ingest;
pub mod io;
pub mod kernels;
pub mod mcmc;
pub mod predict;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod warp;

pub use error::{FmmError, Result};
