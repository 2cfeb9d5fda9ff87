//! Exact kernel detector and its subsampled variant.
//!
//! The background Gram matrix is centered in feature space and the score of a
//! test pixel is the quadratic form of its centered kernel column under the
//! inverse of the squared centered Gram. Centering makes the Gram exactly
//! singular (the all-ones direction is annihilated), so the production path
//! solves the ridge-regularized squared system; a truncated eigendecomposition
//! is available for cross-checks, and an explicit zero ridge first attempts a
//! direct factorization of the centered Gram itself.

use super::{check_bands, score_in_blocks, DEFAULT_BLOCK, DEFAULT_KERNEL_CAP};
use crate::data::DataMatrix;
use crate::kernel::{
    center_kernel_test, center_kernel_train, kernel_matrix, kernel_matrix_symmetric, Kernel,
    KernelCenteringStats,
};
use crate::linalg::{gram_product, pseudo_inverse, spd_solve_prepare, PinvFactor, SpdSolver};
use crate::rng::{sample_indices, seeded_rng};
use crate::{Error, Result};

/// How the (squared) centered Gram system is inverted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSolver {
    /// Cholesky of the squared Gram plus a ridge. The production path.
    Ridge,
    /// Truncated eigendecomposition of the squared Gram; `None` uses the
    /// dimension-scaled machine cutoff. Exists for algebraic cross-checks.
    Pseudoinverse { tol: Option<f64> },
}

/// Options for [`krx_fit`] and [`srx_fit`].
#[derive(Debug, Clone)]
pub struct KrxOptions {
    /// Explicit ridge for the squared Gram; `None` scales one from its mean
    /// diagonal. An explicit `0.0` first tries factoring the centered Gram
    /// directly (possible when centering is off and the kernel matrix is
    /// positive definite) and falls back to the squared system.
    pub ridge: Option<f64>,
    /// Solver for the squared Gram system.
    pub solver: KernelSolver,
    /// Center the Gram and kernel columns in feature space. On by default;
    /// turning it off is for diagnostics and cross-checks.
    pub centering: bool,
    /// Refuse backgrounds larger than this (the Gram is dense n-by-n).
    pub max_gram: usize,
    /// Test pixels scored per block.
    pub block_size: usize,
}

impl Default for KrxOptions {
    fn default() -> Self {
        KrxOptions {
            ridge: None,
            solver: KernelSolver::Ridge,
            centering: true,
            max_gram: DEFAULT_KERNEL_CAP,
            block_size: DEFAULT_BLOCK,
        }
    }
}

#[derive(Debug)]
enum GramSolver {
    /// Factor of the squared centered Gram plus ridge.
    Squared(SpdSolver),
    /// Factor of the centered Gram itself (zero ridge, positive definite).
    Direct(SpdSolver),
    /// Truncated eigendecomposition of the squared centered Gram.
    Truncated(PinvFactor),
}

/// Kernel detector state: the background pixels (needed to evaluate kernel
/// columns at score time), centering statistics and the factored system.
#[derive(Debug)]
pub struct KernelRxModel {
    train: crate::Mat,
    kernel: Kernel,
    centering: Option<KernelCenteringStats>,
    solver: GramSolver,
    block_size: usize,
}

/// Fits the exact kernel detector with default options.
pub fn krx_fit(
    x: &DataMatrix,
    kernel: Kernel,
    ridge: Option<f64>,
) -> Result<super::FittedDetector> {
    krx_fit_with(
        x,
        kernel,
        &KrxOptions {
            ridge,
            ..KrxOptions::default()
        },
    )
}

/// Fits the exact kernel detector on the full background.
pub fn krx_fit_with(
    x: &DataMatrix,
    kernel: Kernel,
    opts: &KrxOptions,
) -> Result<super::FittedDetector> {
    let model = fit_on_pixels(x.values().clone(), kernel, opts)?;
    Ok(super::FittedDetector::Krx(model))
}

fn fit_on_pixels(train: crate::Mat, kernel: Kernel, opts: &KrxOptions) -> Result<KernelRxModel> {
    let n = train.nrows();
    if n > opts.max_gram {
        return Err(Error::TooLarge {
            n,
            cap: opts.max_gram,
        });
    }
    if n < 2 {
        return Err(Error::invalid(
            "kernel detector needs at least 2 background pixels",
        ));
    }
    super::check_background_varies(&train)?;
    let k = kernel_matrix_symmetric(&train, kernel)?;
    let (gram, centering) = if opts.centering {
        let (kc, stats) = center_kernel_train(&k)?;
        (kc, Some(stats))
    } else {
        (k, None)
    };

    let solver = match opts.solver {
        KernelSolver::Ridge => {
            if opts.ridge == Some(0.0) {
                // An exactly-zero ridge: the Gram may be invertible on its
                // own, which halves the solve work and avoids squaring the
                // condition number.
                match spd_solve_prepare(&gram, Some(0.0)) {
                    Ok(direct) => GramSolver::Direct(direct),
                    Err(_) => {
                        GramSolver::Squared(spd_solve_prepare(&gram_product(&gram), Some(0.0))?)
                    }
                }
            } else {
                let squared = gram_product(&gram);
                drop(gram);
                GramSolver::Squared(spd_solve_prepare(&squared, opts.ridge)?)
            }
        }
        KernelSolver::Pseudoinverse { tol } => {
            let squared = gram_product(&gram);
            drop(gram);
            GramSolver::Truncated(pseudo_inverse(&squared, tol)?)
        }
    };

    Ok(KernelRxModel {
        train,
        kernel,
        centering,
        solver,
        block_size: opts.block_size,
    })
}

impl KernelRxModel {
    /// Kernel used at fit and score time.
    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// Number of background pixels in the Gram.
    pub fn train_len(&self) -> usize {
        self.train.nrows()
    }

    /// Ridge actually added, when the ridge path was taken.
    pub fn ridge(&self) -> Option<f64> {
        match &self.solver {
            GramSolver::Squared(s) | GramSolver::Direct(s) => Some(s.ridge()),
            GramSolver::Truncated(_) => None,
        }
    }

    /// Whether feature-space centering is applied.
    pub fn is_centered(&self) -> bool {
        self.centering.is_some()
    }

    pub(super) fn score_raw(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        check_bands(self.train.ncols(), x)?;
        score_in_blocks(x, self.block_size, |block| {
            let mut kt = kernel_matrix(&self.train, &block, self.kernel)?;
            if let Some(stats) = &self.centering {
                center_kernel_test(&mut kt, stats);
            }
            Ok(match &self.solver {
                GramSolver::Squared(s) => s.quad_forms(&kt),
                GramSolver::Direct(s) => {
                    let solved = s.solve(&kt);
                    (0..solved.ncols())
                        .map(|j| solved.col(j).norm_l2().powi(2))
                        .collect()
                }
                GramSolver::Truncated(p) => p.quad_forms(&kt),
            })
        })
    }

    /// Resident size: stored pixels, centering means and the factor.
    pub fn memory_bytes(&self) -> usize {
        let solver = match &self.solver {
            GramSolver::Squared(s) | GramSolver::Direct(s) => s.memory_bytes(),
            GramSolver::Truncated(p) => p.memory_bytes(),
        };
        let stats = self.centering.as_ref().map_or(0, |c| c.row_means().len() * 8);
        self.train.nrows() * self.train.ncols() * 8 + stats + solver
    }
}

/// Kernel detector fitted on a seeded uniform subsample of the background.
#[derive(Debug)]
pub struct SubsampledRxModel {
    indices: Vec<usize>,
    seed: Option<u64>,
    inner: KernelRxModel,
}

/// Fits the subsampled kernel detector with default options.
pub fn srx_fit(
    x: &DataMatrix,
    sample: usize,
    seed: u64,
    kernel: Kernel,
    ridge: Option<f64>,
) -> Result<super::FittedDetector> {
    srx_fit_with(
        x,
        sample,
        seed,
        kernel,
        &KrxOptions {
            ridge,
            ..KrxOptions::default()
        },
    )
}

/// Fits the kernel detector on `sample` pixels drawn uniformly without
/// replacement. The sample is kept in ascending row order, so a sample of
/// the full background reproduces the exact detector bit for bit.
pub fn srx_fit_with(
    x: &DataMatrix,
    sample: usize,
    seed: u64,
    kernel: Kernel,
    opts: &KrxOptions,
) -> Result<super::FittedDetector> {
    if sample == 0 || sample > x.n() {
        return Err(Error::invalid(format!(
            "subsample of {} pixels from a background of {}",
            sample,
            x.n()
        )));
    }
    let indices = sample_indices(x.n(), sample, &mut seeded_rng(seed));
    let inner = fit_on_pixels(x.select_rows(&indices), kernel, opts)?;
    Ok(super::FittedDetector::Srx(SubsampledRxModel {
        indices,
        seed: Some(seed),
        inner,
    }))
}

/// Fits the subsampled kernel detector on caller-chosen background rows.
pub fn srx_fit_rows(
    x: &DataMatrix,
    rows: &[usize],
    kernel: Kernel,
    opts: &KrxOptions,
) -> Result<super::FittedDetector> {
    validate_rows(rows, x.n())?;
    let inner = fit_on_pixels(x.select_rows(rows), kernel, opts)?;
    Ok(super::FittedDetector::Srx(SubsampledRxModel {
        indices: rows.to_vec(),
        seed: None,
        inner,
    }))
}

pub(super) fn validate_rows(rows: &[usize], n: usize) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("empty row selection"));
    }
    if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
        return Err(Error::invalid(format!(
            "row {bad} out of range for {n} pixels"
        )));
    }
    Ok(())
}

impl SubsampledRxModel {
    /// Background rows the model was fitted on, in fit order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of sampled pixels.
    pub fn sample_len(&self) -> usize {
        self.indices.len()
    }

    /// Seed used to draw the sample, when it was drawn rather than given.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Kernel used at fit and score time.
    pub fn kernel(&self) -> Kernel {
        self.inner.kernel()
    }

    pub(super) fn score_raw(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        self.inner.score_raw(x)
    }

    /// Resident size of the underlying kernel model plus the index list.
    pub fn memory_bytes(&self) -> usize {
        self.inner.memory_bytes() + self.indices.len() * 8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{rx_fit, FittedDetector};
    use crate::Mat;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cloud(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = crate::rng::seeded_rng(seed);
        DataMatrix::from_values(Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn cloud_with_outlier(n: usize, d: usize, seed: u64) -> DataMatrix {
        let base = cloud(n, d, seed);
        let mut vals = base.values().clone();
        for j in 0..d {
            vals[(0, j)] = 5.0;
        }
        DataMatrix::from_values(vals).unwrap()
    }

    #[test]
    fn outlier_gets_top_score() {
        let x = cloud_with_outlier(60, 3, 1);
        let model = krx_fit(&x, Kernel::rbf(1.0).unwrap(), None).unwrap();
        let field = model.score(&x).unwrap();
        let top = field
            .scores()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(top, 0);
        assert!(field.scores().iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn linear_kernel_with_centering_matches_mahalanobis_ranks() {
        // With a linear kernel the feature-space construction collapses to
        // the Mahalanobis detector up to a 1/n scale, provided the inverse
        // is exact (truncated eigendecomposition, no ridge).
        let x = cloud(40, 3, 2);
        let tests = cloud(15, 3, 3);
        let kernel_model = krx_fit_with(
            &x,
            Kernel::linear(),
            &KrxOptions {
                solver: KernelSolver::Pseudoinverse { tol: None },
                ..KrxOptions::default()
            },
        )
        .unwrap();
        let plain = rx_fit(&x, Some(0.0)).unwrap();
        let a = kernel_model.score(&tests).unwrap();
        let b = plain.score(&tests).unwrap();
        let n = x.n() as f64;
        for (u, v) in a.scores().iter().zip(b.scores()) {
            assert_relative_eq!(u * n, v, max_relative = 1e-6);
        }
    }

    #[test]
    fn full_subsample_reproduces_exact_detector() {
        let x = cloud_with_outlier(50, 3, 4);
        let kernel = Kernel::rbf(0.8).unwrap();
        let exact = krx_fit(&x, kernel, None).unwrap();
        let sub = srx_fit(&x, 50, 9, kernel, None).unwrap();
        if let FittedDetector::Srx(m) = &sub {
            assert_eq!(m.indices(), (0..50).collect::<Vec<_>>());
        }
        let a = exact.score(&x).unwrap();
        let b = sub.score(&x).unwrap();
        assert_eq!(a.scores(), b.scores());
    }

    #[test]
    fn subsample_is_seed_deterministic() {
        let x = cloud(80, 4, 5);
        let kernel = Kernel::rbf(1.0).unwrap();
        let a = srx_fit(&x, 20, 7, kernel, None).unwrap();
        let b = srx_fit(&x, 20, 7, kernel, None).unwrap();
        let c = srx_fit(&x, 20, 8, kernel, None).unwrap();
        assert_eq!(a.score(&x).unwrap().scores(), b.score(&x).unwrap().scores());
        let (FittedDetector::Srx(ma), FittedDetector::Srx(mc)) = (&a, &c) else {
            unreachable!()
        };
        assert_ne!(ma.indices(), mc.indices());
    }

    #[test]
    fn refuses_backgrounds_beyond_the_gram_cap() {
        let x = cloud(30, 3, 6);
        let err = krx_fit_with(
            &x,
            Kernel::rbf(1.0).unwrap(),
            &KrxOptions {
                max_gram: 20,
                ..KrxOptions::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::TooLarge { n: 30, cap: 20 }));
    }

    #[test]
    fn zero_ridge_direct_path_matches_truncated_solver() {
        // Without centering the kernel matrix is positive definite, so the
        // direct factorization succeeds and must agree with the exact
        // (truncated, full-rank) inverse of the squared system.
        let x = cloud(30, 3, 7);
        let tests = cloud(10, 3, 8);
        let kernel = Kernel::rbf(0.5).unwrap();
        let base = KrxOptions {
            centering: false,
            ..KrxOptions::default()
        };
        let direct = krx_fit_with(
            &x,
            kernel,
            &KrxOptions {
                ridge: Some(0.0),
                ..base.clone()
            },
        )
        .unwrap();
        let truncated = krx_fit_with(
            &x,
            kernel,
            &KrxOptions {
                solver: KernelSolver::Pseudoinverse { tol: None },
                ..base
            },
        )
        .unwrap();
        let a = direct.score(&tests).unwrap();
        let b = truncated.score(&tests).unwrap();
        for (u, v) in a.scores().iter().zip(b.scores()) {
            assert_relative_eq!(u, v, max_relative = 1e-6);
        }
    }

    #[test]
    fn ridge_and_truncated_solvers_agree_when_well_conditioned() {
        // A narrow kernel keeps the Gram near the identity, so a tiny ridge
        // and the truncated inverse are numerically interchangeable.
        let x = cloud(40, 3, 10);
        let tests = cloud(12, 3, 11);
        let kernel = Kernel::rbf(0.3).unwrap();
        let ridged = krx_fit_with(
            &x,
            kernel,
            &KrxOptions {
                ridge: Some(1e-10),
                ..KrxOptions::default()
            },
        )
        .unwrap();
        let truncated = krx_fit_with(
            &x,
            kernel,
            &KrxOptions {
                solver: KernelSolver::Pseudoinverse { tol: None },
                ..KrxOptions::default()
            },
        )
        .unwrap();
        let a = ridged.score(&tests).unwrap();
        let b = truncated.score(&tests).unwrap();
        for (u, v) in a.scores().iter().zip(b.scores()) {
            assert_relative_eq!(u, v, max_relative = 1e-3, epsilon = 1e-8);
        }
    }

    #[test]
    fn rejects_tiny_or_invalid_subsamples() {
        let x = cloud(20, 3, 12);
        let kernel = Kernel::rbf(1.0).unwrap();
        assert!(srx_fit(&x, 0, 1, kernel, None).is_err());
        assert!(srx_fit(&x, 21, 1, kernel, None).is_err());
        assert!(srx_fit_rows(&x, &[5, 25], kernel, &KrxOptions::default()).is_err());
        assert!(krx_fit(&cloud(1, 3, 13), kernel, None).is_err());
    }
}
