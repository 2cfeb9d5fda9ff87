//! Random-feature detectors: Mahalanobis distance in an explicit
//! finite-dimensional feature space whose inner products approximate the
//! Gaussian kernel. Cost is linear in the number of background pixels, so
//! these scale where the exact kernel detector cannot.
//!
//! Two frequency samplers are offered: independent Gaussian draws, and the
//! orthogonalized variant that couples draws within blocks to cut the
//! approximation variance at equal feature count.

use super::{check_bands, score_in_blocks, DEFAULT_BLOCK};
use crate::data::{center_columns, CenteringStats, DataMatrix};
use crate::features::{feature_map, sample_orf, sample_rff, FeatureKind, FrequencyMatrix};
use crate::kernel::Kernel;
use crate::linalg::{gram_product, spd_solve_prepare, SpdSolver};
use crate::{Error, Mat, Result};

/// Options for [`rrx_fit`] and [`orx_fit`].
#[derive(Debug, Clone)]
pub struct FeatureRxOptions {
    /// Explicit ridge for the feature covariance; `None` scales one from its
    /// mean diagonal. The ridge also absorbs the rank deficiency that arises
    /// whenever the feature count exceeds the pixel count.
    pub ridge: Option<f64>,
    /// Test pixels scored per block.
    pub block_size: usize,
}

impl Default for FeatureRxOptions {
    fn default() -> Self {
        FeatureRxOptions {
            ridge: None,
            block_size: DEFAULT_BLOCK,
        }
    }
}

/// Fitted random-feature detector: frequency matrix, feature means and the
/// factored (uncentered-by-pixels, centered-by-features) second moment.
#[derive(Debug)]
pub struct FeatureRxModel {
    freqs: FrequencyMatrix,
    means: CenteringStats,
    solver: SpdSolver,
    seed: u64,
    block_size: usize,
}

/// Fits the independent-frequency detector with default options.
pub fn rrx_fit(
    x: &DataMatrix,
    n_freq: usize,
    sigma: f64,
    seed: u64,
    ridge: Option<f64>,
) -> Result<super::FittedDetector> {
    rrx_fit_with(
        x,
        n_freq,
        sigma,
        seed,
        &FeatureRxOptions {
            ridge,
            ..FeatureRxOptions::default()
        },
    )
}

/// Fits the detector on independent Gaussian frequency draws.
pub fn rrx_fit_with(
    x: &DataMatrix,
    n_freq: usize,
    sigma: f64,
    seed: u64,
    opts: &FeatureRxOptions,
) -> Result<super::FittedDetector> {
    let freqs = sample_rff(x.d(), n_freq, sigma, seed)?;
    Ok(super::FittedDetector::Rrx(fit_on_features(
        x, freqs, seed, opts,
    )?))
}

/// Fits the orthogonalized-frequency detector with default options.
pub fn orx_fit(
    x: &DataMatrix,
    n_freq: usize,
    sigma: f64,
    seed: u64,
    ridge: Option<f64>,
) -> Result<super::FittedDetector> {
    orx_fit_with(
        x,
        n_freq,
        sigma,
        seed,
        &FeatureRxOptions {
            ridge,
            ..FeatureRxOptions::default()
        },
    )
}

/// Fits the detector on orthogonalized frequency blocks.
pub fn orx_fit_with(
    x: &DataMatrix,
    n_freq: usize,
    sigma: f64,
    seed: u64,
    opts: &FeatureRxOptions,
) -> Result<super::FittedDetector> {
    let freqs = sample_orf(x.d(), n_freq, sigma, seed)?;
    Ok(super::FittedDetector::Orx(fit_on_features(
        x, freqs, seed, opts,
    )?))
}

fn fit_on_features(
    x: &DataMatrix,
    freqs: FrequencyMatrix,
    seed: u64,
    opts: &FeatureRxOptions,
) -> Result<FeatureRxModel> {
    if x.n() < 2 {
        return Err(Error::invalid(
            "feature detector needs at least 2 background pixels",
        ));
    }
    super::check_background_varies(x.values())?;
    let z = feature_map(x.values(), &freqs)?;
    let (zc, means) = center_columns(&z);
    drop(z);
    // Second moment of the centered features; rows of zc are pixels, so the
    // product wants zc^T on the left.
    let second = gram_product(&zc.transpose().to_owned());
    drop(zc);
    let solver = spd_solve_prepare(&second, opts.ridge)?;
    Ok(FeatureRxModel {
        freqs,
        means,
        solver,
        seed,
        block_size: opts.block_size,
    })
}

impl FeatureRxModel {
    /// Number of frequency draws (the feature space has twice this many axes).
    pub fn n_freq(&self) -> usize {
        self.freqs.n_freq()
    }

    /// Which sampler produced the frequencies.
    pub fn feature_kind(&self) -> FeatureKind {
        self.freqs.kind()
    }

    /// Kernel the feature inner products approximate.
    pub fn kernel(&self) -> Kernel {
        Kernel::Rbf {
            sigma: self.freqs.sigma(),
        }
    }

    /// Seed of the frequency draw.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Ridge actually added to the feature second moment.
    pub fn ridge(&self) -> f64 {
        self.solver.ridge()
    }

    pub(super) fn score_raw(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        check_bands(self.freqs.d(), x)?;
        score_in_blocks(x, self.block_size, |block| {
            let zt = feature_map(&block, &self.freqs)?;
            let m = self.means.means();
            let cols = Mat::from_fn(zt.ncols(), zt.nrows(), |i, j| zt[(j, i)] - m[i]);
            Ok(self.solver.quad_forms(&cols))
        })
    }

    /// Resident size: frequencies, feature means and the factor.
    pub fn memory_bytes(&self) -> usize {
        let w = self.freqs.weights();
        w.nrows() * w.ncols() * 8 + self.means.means().len() * 8 + self.solver.memory_bytes()
    }
}
