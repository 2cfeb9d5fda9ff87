//! The detector family: a shared fitting/scoring interface over the global
//! Mahalanobis detector and its kernel and random-feature variants.
//!
//! Every detector follows the same two-phase shape: `fit` learns a background
//! model from a matrix of pixels (rows), and `score` assigns each test pixel a
//! nonnegative anomaly score — larger means further from the background. The
//! variants trade exactness for scalability:
//!
//! * [`rx_fit`] — Mahalanobis distance under the background covariance.
//! * [`krx_fit`] — kernelized version; exact but quadratic in pixel count.
//! * [`srx_fit`] — kernelized version fitted on a random subsample.
//! * [`rrx_fit`] / [`orx_fit`] — random Fourier / orthogonal feature
//!   approximations with linear cost in pixel count.
//! * [`nrx_fit`] / [`lrx_fit`] — landmark (Nyström) low-rank approximation.
//!
//! [`DetectorSpec`] is the config-driven entry point used by the CLI, the
//! evaluation grid and the benchmark harness.

mod feature_rx;
mod kernel_rx;
mod nystrom_rx;
mod rx;

pub use feature_rx::{
    orx_fit, orx_fit_with, rrx_fit, rrx_fit_with, FeatureRxModel, FeatureRxOptions,
};
pub use kernel_rx::{
    krx_fit, krx_fit_with, srx_fit, srx_fit_rows, srx_fit_with, KernelRxModel, KernelSolver,
    KrxOptions, SubsampledRxModel,
};
pub use nystrom_rx::{
    lrx_fit, nrx_fit, nrx_fit_rows, nrx_fit_with, nrx_score_unsimplified, NrxOptions,
    NystromRxModel,
};
pub use rx::{rx_fit, rx_fit_with, RxModel, RxOptions};

use crate::data::DataMatrix;
use crate::kernel::{median_heuristic_sigma, Kernel};
use crate::{Error, Mat, Result};
use serde::{Deserialize, Serialize};

/// Number of test pixels scored per block. Bounds transient memory during
/// scoring without affecting results.
pub const DEFAULT_BLOCK: usize = 1024;

/// Refuse to build a dense n-by-n kernel system past this many pixels unless
/// the caller raises the cap explicitly.
pub const DEFAULT_KERNEL_CAP: usize = 10_000;

/// Default subsample / landmark / frequency count when none is given.
pub const DEFAULT_RANK: usize = 100;

/// Default number of pixels sampled for the pairwise-distance median when the
/// kernel width is left unspecified.
pub const DEFAULT_MEDIAN_SAMPLE: usize = 1000;

/// Which detector a [`DetectorSpec`] builds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    /// Mahalanobis distance to the background mean.
    Rx,
    /// Exact kernel detector on the full background.
    Krx,
    /// Kernel detector fitted on a random subsample.
    Srx,
    /// Random Fourier feature approximation.
    Rrx,
    /// Orthogonal random feature approximation.
    Orx,
    /// Landmark (Nyström) low-rank approximation.
    Nrx,
}

impl DetectorKind {
    /// All kinds, in presentation order.
    pub const ALL: [DetectorKind; 6] = [
        DetectorKind::Rx,
        DetectorKind::Krx,
        DetectorKind::Srx,
        DetectorKind::Rrx,
        DetectorKind::Orx,
        DetectorKind::Nrx,
    ];

    /// Lower-case name used on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Rx => "rx",
            DetectorKind::Krx => "krx",
            DetectorKind::Srx => "srx",
            DetectorKind::Rrx => "rrx",
            DetectorKind::Orx => "orx",
            DetectorKind::Nrx => "nrx",
        }
    }

    /// True for the kinds that evaluate a kernel and therefore need a width.
    pub fn uses_kernel(self) -> bool {
        !matches!(self, DetectorKind::Rx)
    }

    /// True for the kinds that take a subsample/landmark/frequency count.
    pub fn uses_rank(self) -> bool {
        matches!(
            self,
            DetectorKind::Srx | DetectorKind::Rrx | DetectorKind::Orx | DetectorKind::Nrx
        )
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rx" => Ok(DetectorKind::Rx),
            "krx" => Ok(DetectorKind::Krx),
            "srx" => Ok(DetectorKind::Srx),
            "rrx" => Ok(DetectorKind::Rrx),
            "orx" => Ok(DetectorKind::Orx),
            "nrx" | "lrx" => Ok(DetectorKind::Nrx),
            other => Err(Error::invalid(format!(
                "unknown detector {other:?}; expected one of rx, krx, srx, rrx, orx, nrx"
            ))),
        }
    }
}

/// Anomaly scores for a set of test pixels, with the image shape when known.
#[derive(Debug, Clone)]
pub struct ScoreField {
    scores: Vec<f64>,
    shape: Option<(usize, usize)>,
}

impl ScoreField {
    /// Wraps raw scores, rejecting non-finite values and shape mismatches.
    pub fn new(scores: Vec<f64>, shape: Option<(usize, usize)>) -> Result<Self> {
        if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!(
                "score {} of {} is not finite",
                bad,
                scores.len()
            )));
        }
        if let Some((h, w)) = shape {
            if h * w != scores.len() {
                return Err(Error::shape(
                    format!("{h}x{w} = {} scores", h * w),
                    format!("{}", scores.len()),
                ));
            }
        }
        Ok(ScoreField { scores, shape })
    }

    /// One score per test pixel, in input order (row-major when from an image).
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Image height and width, if the pixels came from an image.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.shape
    }

    /// Number of scored pixels.
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    /// True when no pixels were scored.
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Consumes the field, returning the raw scores.
    pub fn into_scores(self) -> Vec<f64> {
        self.scores
    }
}

/// A fitted background model of any kind, ready to score pixels.
#[derive(Debug)]
pub enum FittedDetector {
    Rx(RxModel),
    Krx(KernelRxModel),
    Srx(SubsampledRxModel),
    Rrx(FeatureRxModel),
    Orx(FeatureRxModel),
    Nrx(NystromRxModel),
}

impl FittedDetector {
    /// Which detector this is.
    pub fn kind(&self) -> DetectorKind {
        match self {
            FittedDetector::Rx(_) => DetectorKind::Rx,
            FittedDetector::Krx(_) => DetectorKind::Krx,
            FittedDetector::Srx(_) => DetectorKind::Srx,
            FittedDetector::Rrx(_) => DetectorKind::Rrx,
            FittedDetector::Orx(_) => DetectorKind::Orx,
            FittedDetector::Nrx(_) => DetectorKind::Nrx,
        }
    }

    /// Scores every pixel of `x`. The band count must match the fit data.
    pub fn score(&self, x: &DataMatrix) -> Result<ScoreField> {
        let raw = match self {
            FittedDetector::Rx(m) => m.score_raw(x)?,
            FittedDetector::Krx(m) => m.score_raw(x)?,
            FittedDetector::Srx(m) => m.score_raw(x)?,
            FittedDetector::Rrx(m) | FittedDetector::Orx(m) => m.score_raw(x)?,
            FittedDetector::Nrx(m) => m.score_raw(x)?,
        };
        ScoreField::new(raw, x.shape())
    }

    /// The kernel evaluated at score time, when the detector uses one.
    /// Random-feature detectors report the kernel they approximate.
    pub fn kernel(&self) -> Option<Kernel> {
        match self {
            FittedDetector::Rx(_) => None,
            FittedDetector::Krx(m) => Some(m.kernel()),
            FittedDetector::Srx(m) => Some(m.kernel()),
            FittedDetector::Rrx(m) | FittedDetector::Orx(m) => Some(m.kernel()),
            FittedDetector::Nrx(m) => Some(m.kernel()),
        }
    }

    /// Subsample size, landmark count, or frequency count, when applicable.
    pub fn rank(&self) -> Option<usize> {
        match self {
            FittedDetector::Rx(_) | FittedDetector::Krx(_) => None,
            FittedDetector::Srx(m) => Some(m.sample_len()),
            FittedDetector::Rrx(m) | FittedDetector::Orx(m) => Some(m.n_freq()),
            FittedDetector::Nrx(m) => Some(m.landmark_len()),
        }
    }

    /// Rough resident size of the fitted model in bytes (factors, stored
    /// pixels and means). Used by the benchmark harness memory checks.
    pub fn memory_bytes(&self) -> usize {
        match self {
            FittedDetector::Rx(m) => m.memory_bytes(),
            FittedDetector::Krx(m) => m.memory_bytes(),
            FittedDetector::Srx(m) => m.memory_bytes(),
            FittedDetector::Rrx(m) | FittedDetector::Orx(m) => m.memory_bytes(),
            FittedDetector::Nrx(m) => m.memory_bytes(),
        }
    }
}

/// How the kernel width is chosen for kernel-based detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaSpec {
    /// Use this width directly.
    Value(f64),
    /// Use the median pairwise distance of a seeded pixel sample.
    Median,
}

impl SigmaSpec {
    /// Resolves to a concrete width for the given background.
    pub fn resolve(self, x: &DataMatrix, sample_size: usize, seed: u64) -> Result<f64> {
        match self {
            SigmaSpec::Value(s) => {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::invalid(format!(
                        "kernel width must be finite and positive, got {s}"
                    )));
                }
                Ok(s)
            }
            SigmaSpec::Median => median_heuristic_sigma(x.values(), sample_size, seed),
        }
    }
}

impl std::str::FromStr for SigmaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("median") {
            return Ok(SigmaSpec::Median);
        }
        s.parse::<f64>()
            .map(SigmaSpec::Value)
            .map_err(|_| Error::invalid(format!("kernel width must be a number or \"median\", got {s:?}")))
    }
}

/// Declarative description of a detector, used by the CLI, grid search and
/// benchmarks. [`DetectorSpec::fit`] resolves defaults (median kernel width,
/// automatic ridge) and dispatches to the right fit function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorSpec {
    /// Which detector to build.
    pub kind: DetectorKind,
    /// Kernel width choice; ignored by the plain Mahalanobis detector.
    pub sigma: SigmaSpec,
    /// Subsample size, landmark count or frequency count, for the kinds that
    /// take one. `None` means [`DEFAULT_RANK`].
    pub rank: Option<usize>,
    /// Explicit ridge; `None` scales one from the system's mean diagonal.
    pub ridge: Option<f64>,
    /// Eigenvalue cutoff for the landmark detector's pseudoinverse;
    /// `None` uses the dimension-scaled machine default.
    pub pinv_tol: Option<f64>,
    /// Whether kernel detectors center in feature space. Defaults to true;
    /// turning it off is for diagnostics only.
    pub centering: bool,
    /// Seed for subsampling, frequency draws and the median width sample.
    pub seed: u64,
    /// Test pixels scored per block.
    pub block_size: usize,
    /// Dense-kernel pixel cap for the exact kernel detector.
    pub max_gram: usize,
    /// Pixels sampled when resolving a median kernel width.
    pub median_sample: usize,
}

impl DetectorSpec {
    /// A spec of the given kind with library defaults everywhere else.
    pub fn new(kind: DetectorKind) -> Self {
        DetectorSpec {
            kind,
            sigma: SigmaSpec::Median,
            rank: None,
            ridge: None,
            pinv_tol: None,
            centering: true,
            seed: 0,
            block_size: DEFAULT_BLOCK,
            max_gram: DEFAULT_KERNEL_CAP,
            median_sample: DEFAULT_MEDIAN_SAMPLE,
        }
    }

    /// The concrete kernel this spec would use on `x`, if any.
    pub fn resolve_kernel(&self, x: &DataMatrix) -> Result<Option<Kernel>> {
        if !self.kind.uses_kernel() {
            return Ok(None);
        }
        let sigma = self
            .sigma
            .resolve(x, self.median_sample.min(x.n()), self.seed)?;
        Ok(Some(Kernel::rbf(sigma)?))
    }

    /// Fits the described detector to the background `x`.
    pub fn fit(&self, x: &DataMatrix) -> Result<FittedDetector> {
        let rank = self.rank.unwrap_or(DEFAULT_RANK);
        match self.kind {
            DetectorKind::Rx => rx_fit_with(
                x,
                &RxOptions {
                    ridge: self.ridge,
                    block_size: self.block_size,
                },
            ),
            DetectorKind::Krx => {
                let kernel = self.resolve_kernel(x)?.expect("kernel kind");
                krx_fit_with(x, kernel, &self.krx_options())
            }
            DetectorKind::Srx => {
                let kernel = self.resolve_kernel(x)?.expect("kernel kind");
                srx_fit_with(x, rank, self.seed, kernel, &self.krx_options())
            }
            DetectorKind::Rrx | DetectorKind::Orx => {
                let kernel = self.resolve_kernel(x)?.expect("kernel kind");
                let sigma = match kernel {
                    Kernel::Rbf { sigma } => sigma,
                    Kernel::Linear => unreachable!("resolve_kernel returns rbf"),
                };
                let opts = feature_rx::FeatureRxOptions {
                    ridge: self.ridge,
                    block_size: self.block_size,
                };
                if self.kind == DetectorKind::Rrx {
                    rrx_fit_with(x, rank, sigma, self.seed, &opts)
                } else {
                    orx_fit_with(x, rank, sigma, self.seed, &opts)
                }
            }
            DetectorKind::Nrx => {
                let kernel = self.resolve_kernel(x)?.expect("kernel kind");
                nrx_fit_with(
                    x,
                    rank,
                    self.seed,
                    kernel,
                    &NrxOptions {
                        pinv_tol: self.pinv_tol,
                        centering: self.centering,
                        block_size: self.block_size,
                        max_gram: self.max_gram,
                    },
                )
            }
        }
    }

    fn krx_options(&self) -> KrxOptions {
        KrxOptions {
            ridge: self.ridge,
            solver: KernelSolver::Ridge,
            centering: self.centering,
            max_gram: self.max_gram,
            block_size: self.block_size,
        }
    }
}

/// Rejects a background whose pixels are all bit-identical: there is no
/// spread to whiten, and roundoff would otherwise turn the fit into noise.
pub(crate) fn check_background_varies(x: &Mat) -> Result<()> {
    let (n, d) = (x.nrows(), x.ncols());
    let varies = (1..n).any(|i| (0..d).any(|j| x[(i, j)] != x[(0, j)]));
    if n > 1 && !varies {
        return Err(Error::DegenerateData(
            "all background pixels are identical".into(),
        ));
    }
    Ok(())
}

/// Verifies that test pixels have the band count the model was fitted with.
pub(crate) fn check_bands(expected: usize, x: &DataMatrix) -> Result<()> {
    if x.d() != expected {
        return Err(Error::shape(
            format!("{expected} bands"),
            format!("{} bands", x.d()),
        ));
    }
    Ok(())
}

/// Splits `n` pixels into scoring blocks of at most `block` rows.
pub(crate) fn block_ranges(n: usize, block: usize) -> Vec<std::ops::Range<usize>> {
    let block = block.max(1);
    (0..n)
        .step_by(block)
        .map(|start| start..(start + block).min(n))
        .collect()
}

/// Copies rows `range` of `x` into an owned matrix.
pub(crate) fn rows_block(x: &Mat, range: std::ops::Range<usize>) -> Mat {
    let d = x.ncols();
    Mat::from_fn(range.len(), d, |i, j| x[(range.start + i, j)])
}

/// Runs `score_block` over every block of `x` in parallel and concatenates
/// the per-block scores in input order.
pub(crate) fn score_in_blocks<F>(x: &DataMatrix, block: usize, score_block: F) -> Result<Vec<f64>>
where
    F: Fn(Mat) -> Result<Vec<f64>> + Sync,
{
    use rayon::prelude::*;
    let ranges = block_ranges(x.n(), block);
    let per_block: Vec<Vec<f64>> = ranges
        .into_par_iter()
        .map(|r| score_block(rows_block(x.values(), r)))
        .collect::<Result<_>>()?;
    Ok(per_block.into_iter().flatten().collect())
}
