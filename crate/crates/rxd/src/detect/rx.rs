//! Mahalanobis-distance detector: squared distance to the background mean
//! under the inverse background covariance.

use super::{check_bands, score_in_blocks, DEFAULT_BLOCK};
use crate::data::{center_columns, covariance, CenteringStats, DataMatrix};
use crate::linalg::{spd_solve_prepare, SpdSolver};
use crate::{Mat, Result};

/// Options for [`rx_fit`].
#[derive(Debug, Clone)]
pub struct RxOptions {
    /// Explicit ridge added to the covariance diagonal; `None` scales one
    /// from the mean diagonal so rank-deficient backgrounds stay solvable.
    pub ridge: Option<f64>,
    /// Test pixels scored per block.
    pub block_size: usize,
}

impl Default for RxOptions {
    fn default() -> Self {
        RxOptions {
            ridge: None,
            block_size: DEFAULT_BLOCK,
        }
    }
}

/// Background mean and factored covariance.
#[derive(Debug)]
pub struct RxModel {
    stats: CenteringStats,
    solver: SpdSolver,
    block_size: usize,
}

/// Fits the Mahalanobis detector with default options.
pub fn rx_fit(x: &DataMatrix, ridge: Option<f64>) -> Result<super::FittedDetector> {
    rx_fit_with(
        x,
        &RxOptions {
            ridge,
            ..RxOptions::default()
        },
    )
}

/// Fits the Mahalanobis detector: centers the background, forms the
/// covariance (normalized by the pixel count) and factors it once.
pub fn rx_fit_with(x: &DataMatrix, opts: &RxOptions) -> Result<super::FittedDetector> {
    super::check_background_varies(x.values())?;
    if x.n() <= x.d() {
        log::warn!(
            "covariance from {} pixels of {} bands is rank deficient; \
             the ridge will dominate",
            x.n(),
            x.d()
        );
    }
    let (xc, stats) = center_columns(x.values());
    let cov = covariance(&xc);
    let solver = spd_solve_prepare(&cov, opts.ridge)?;
    Ok(super::FittedDetector::Rx(RxModel {
        stats,
        solver,
        block_size: opts.block_size,
    }))
}

impl RxModel {
    /// Ridge that was actually added to the covariance diagonal.
    pub fn ridge(&self) -> f64 {
        self.solver.ridge()
    }

    /// Background mean per band.
    pub fn mean(&self) -> &[f64] {
        self.stats.means()
    }

    pub(super) fn score_raw(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        check_bands(self.solver.dim(), x)?;
        score_in_blocks(x, self.block_size, |block| {
            let d = block.ncols();
            let b = block.nrows();
            // quad_forms consumes one test vector per column
            let cols = Mat::from_fn(d, b, |i, j| block[(j, i)] - self.stats.means()[i]);
            Ok(self.solver.quad_forms(&cols))
        })
    }

    /// Resident size: mean vector plus covariance factor.
    pub fn memory_bytes(&self) -> usize {
        self.stats.means().len() * 8 + self.solver.memory_bytes()
    }
}
