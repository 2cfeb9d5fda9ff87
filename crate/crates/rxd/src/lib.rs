//! Global anomaly detection for multiband (e.g. hyperspectral) images.
//!
//! The library implements the classic RX detector — the squared Mahalanobis
//! distance of each pixel from the background distribution — together with a
//! family of nonlinear variants that replace the background covariance with a
//! kernel-space estimate:
//!
//! * [`detect::rx_fit`] — linear RX on the band covariance.
//! * [`detect::krx_fit`] — exact kernel RX on the full centered Gram matrix.
//! * [`detect::srx_fit`] — kernel RX on a uniform subsample of the background.
//! * [`detect::rrx_fit`] / [`detect::orx_fit`] — RX in an explicit random
//!   Fourier (or orthogonal random) feature space.
//! * [`detect::nrx_fit`] — low-rank (Nyström) kernel RX built from a landmark
//!   subsample.
//!
//! All detectors share the same contract: `fit` consumes a background
//! [`data::DataMatrix`], `score` maps test pixels to nonnegative anomaly
//! scores, and every random choice is driven by an explicit `u64` seed through
//! a fixed, portable generator (ChaCha20), so results are reproducible across
//! platforms and thread counts.
//!
//! [`eval`] provides ROC/AUC evaluation and parameter grid search, [`bench`]
//! wall-clock timing and scaling sweeps, [`synth`] deterministic synthetic
//! scenes, and [`io`] the on-disk formats (numeric CSV, float32 band-sequential
//! rasters, PGM masks, JSON run records).

pub mod bench;
pub mod data;
pub mod detect;
pub mod eval;
pub mod features;
pub mod io;
pub mod kernel;
pub mod linalg;
pub mod rng;
pub mod synth;

mod error;

pub use error::{Error, Result};

/// Dense column-major `f64` matrix used throughout the crate.
pub type Mat = faer::Mat<f64>;
