//! Landmark (Nyström) low-rank kernel detector.
//!
//! A seeded subset of background pixels serves as landmarks. Every pixel is
//! represented by its kernel column against the landmarks, centered with the
//! landmark Gram's statistics, and the score is the quadratic form under the
//! pseudoinverse of the centered cross-Gram product — an n-linear-cost
//! approximation that recovers the exact kernel detector when every pixel is
//! a landmark. Rank deficiency is expected here (centering alone loses one
//! direction), hence the truncated eigendecomposition instead of a ridge.

use super::kernel_rx::validate_rows;
use super::{check_bands, score_in_blocks, DEFAULT_BLOCK, DEFAULT_KERNEL_CAP};
use crate::data::DataMatrix;
use crate::kernel::{
    center_kernel_test, center_kernel_train, kernel_matrix, kernel_matrix_symmetric, Kernel,
    KernelCenteringStats,
};
use crate::linalg::{gram_product, pseudo_inverse, spd_solve_prepare, PinvFactor};
use crate::rng::{sample_indices, seeded_rng};
use crate::{Error, Mat, Result};

/// Options for [`nrx_fit`].
#[derive(Debug, Clone)]
pub struct NrxOptions {
    /// Relative eigenvalue cutoff for the pseudoinverse; `None` uses the
    /// dimension-scaled machine default.
    pub pinv_tol: Option<f64>,
    /// Center kernel columns with the landmark Gram's statistics. On by
    /// default; turning it off is for diagnostics and cross-checks.
    pub centering: bool,
    /// Test pixels scored per block.
    pub block_size: usize,
    /// Refuse landmark counts beyond this (the landmark system is dense).
    pub max_gram: usize,
}

impl Default for NrxOptions {
    fn default() -> Self {
        NrxOptions {
            pinv_tol: None,
            centering: true,
            block_size: DEFAULT_BLOCK,
            max_gram: DEFAULT_KERNEL_CAP,
        }
    }
}

/// Fitted landmark detector: the landmark pixels, centering statistics of
/// their Gram, and the truncated inverse of the centered cross-Gram product.
#[derive(Debug)]
pub struct NystromRxModel {
    landmarks: Mat,
    indices: Vec<usize>,
    seed: Option<u64>,
    kernel: Kernel,
    centering: Option<KernelCenteringStats>,
    pinv: PinvFactor,
    block_size: usize,
}

/// Fits the landmark detector with default options.
pub fn nrx_fit(
    x: &DataMatrix,
    landmarks: usize,
    seed: u64,
    kernel: Kernel,
    pinv_tol: Option<f64>,
) -> Result<super::FittedDetector> {
    nrx_fit_with(
        x,
        landmarks,
        seed,
        kernel,
        &NrxOptions {
            pinv_tol,
            ..NrxOptions::default()
        },
    )
}

/// Historical name for the low-rank landmark detector; identical to
/// [`nrx_fit`] in every respect.
pub fn lrx_fit(
    x: &DataMatrix,
    landmarks: usize,
    seed: u64,
    kernel: Kernel,
    pinv_tol: Option<f64>,
) -> Result<super::FittedDetector> {
    nrx_fit(x, landmarks, seed, kernel, pinv_tol)
}

/// Fits the landmark detector on `landmarks` pixels drawn uniformly without
/// replacement. The draw is kept in ascending row order, so taking every
/// pixel as a landmark reproduces the exact detector's geometry.
pub fn nrx_fit_with(
    x: &DataMatrix,
    landmarks: usize,
    seed: u64,
    kernel: Kernel,
    opts: &NrxOptions,
) -> Result<super::FittedDetector> {
    if landmarks == 0 || landmarks > x.n() {
        return Err(Error::invalid(format!(
            "{} landmarks from a background of {} pixels",
            landmarks,
            x.n()
        )));
    }
    let indices = sample_indices(x.n(), landmarks, &mut seeded_rng(seed));
    fit_on_landmarks(x, indices, Some(seed), kernel, opts)
}

/// Fits the landmark detector on caller-chosen landmark rows.
pub fn nrx_fit_rows(
    x: &DataMatrix,
    rows: &[usize],
    kernel: Kernel,
    opts: &NrxOptions,
) -> Result<super::FittedDetector> {
    validate_rows(rows, x.n())?;
    fit_on_landmarks(x, rows.to_vec(), None, kernel, opts)
}

fn fit_on_landmarks(
    x: &DataMatrix,
    indices: Vec<usize>,
    seed: Option<u64>,
    kernel: Kernel,
    opts: &NrxOptions,
) -> Result<super::FittedDetector> {
    let r = indices.len();
    if r > opts.max_gram {
        return Err(Error::TooLarge {
            n: r,
            cap: opts.max_gram,
        });
    }
    if r < 2 {
        return Err(Error::invalid("landmark detector needs at least 2 landmarks"));
    }
    let landmarks = x.select_rows(&indices);
    super::check_background_varies(&landmarks)?;
    let khat = kernel_matrix_symmetric(&landmarks, kernel)?;
    let centering = if opts.centering {
        let (_, stats) = center_kernel_train(&khat)?;
        Some(stats)
    } else {
        None
    };
    // Kernel columns of every background pixel against the landmarks; the
    // dominant memory term, linear in the background size.
    let mut cross = kernel_matrix(&landmarks, x.values(), kernel)?;
    if let Some(stats) = &centering {
        center_kernel_test(&mut cross, stats);
    }
    let product = gram_product(&cross);
    drop(cross);
    let pinv = pseudo_inverse(&product, opts.pinv_tol)?;
    Ok(super::FittedDetector::Nrx(NystromRxModel {
        landmarks,
        indices,
        seed,
        kernel,
        centering,
        pinv,
        block_size: opts.block_size,
    }))
}

impl NystromRxModel {
    /// Landmark rows in fit order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Number of landmarks.
    pub fn landmark_len(&self) -> usize {
        self.indices.len()
    }

    /// Seed used to draw the landmarks, when they were drawn rather than given.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Kernel used at fit and score time.
    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    /// Rank retained by the truncated inverse.
    pub fn rank(&self) -> usize {
        self.pinv.rank()
    }

    pub(super) fn score_raw(&self, x: &DataMatrix) -> Result<Vec<f64>> {
        check_bands(self.landmarks.ncols(), x)?;
        score_in_blocks(x, self.block_size, |block| {
            let mut kt = kernel_matrix(&self.landmarks, &block, self.kernel)?;
            if let Some(stats) = &self.centering {
                center_kernel_test(&mut kt, stats);
            }
            Ok(self.pinv.quad_forms(&kt))
        })
    }

    /// Resident size: landmark pixels, centering means and the truncated
    /// eigenbasis.
    pub fn memory_bytes(&self) -> usize {
        let stats = self.centering.as_ref().map_or(0, |c| c.row_means().len() * 8);
        self.landmarks.nrows() * self.landmarks.ncols() * 8
            + self.indices.len() * 8
            + stats
            + self.pinv.memory_bytes()
    }
}

/// Scores `test` with the landmark construction written out in full, without
/// the cancellation that removes the landmark Gram: two regularized solves
/// against the landmark Gram bracket a pseudoinverted n-by-n product. Costs
/// n-squared memory — this exists purely as a cross-check oracle for the
/// compact form and is not part of the production paths.
pub fn nrx_score_unsimplified(
    x: &DataMatrix,
    rows: &[usize],
    kernel: Kernel,
    ridge: Option<f64>,
    pinv_tol: Option<f64>,
    test: &DataMatrix,
) -> Result<Vec<f64>> {
    validate_rows(rows, x.n())?;
    check_bands(x.d(), test)?;
    let landmarks = x.select_rows(rows);
    let khat = kernel_matrix_symmetric(&landmarks, kernel)?;
    let (khat_centered, stats) = center_kernel_train(&khat)?;
    let gram_solver = spd_solve_prepare(&khat_centered, ridge)?;

    let mut cross = kernel_matrix(&landmarks, x.values(), kernel)?;
    center_kernel_test(&mut cross, &stats);

    let cross_t = cross.transpose().to_owned();
    // inner = R^T (G_hat + ridge)^-1 R; its self-product is the middle matrix.
    let solved = gram_solver.solve(&cross);
    let inner = &cross_t * &solved;
    let middle = gram_product(&inner);
    let middle_pinv = pseudo_inverse(&middle, pinv_tol)?;

    let mut kt = kernel_matrix(&landmarks, test.values(), kernel)?;
    center_kernel_test(&mut kt, &stats);
    let solved_kt = gram_solver.solve(&kt);
    let bracket = &cross_t * &solved_kt;
    Ok(middle_pinv.quad_forms(&bracket))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{krx_fit_with, FittedDetector, KernelSolver, KrxOptions};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cloud(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = crate::rng::seeded_rng(seed);
        DataMatrix::from_values(Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn all_landmarks_recovers_the_exact_detector() {
        let x = cloud(50, 3, 1);
        let tests = cloud(20, 3, 2);
        let kernel = Kernel::rbf(0.5).unwrap();
        let exact = krx_fit_with(
            &x,
            kernel,
            &KrxOptions {
                solver: KernelSolver::Pseudoinverse { tol: None },
                ..KrxOptions::default()
            },
        )
        .unwrap();
        let low_rank = nrx_fit(&x, 50, 3, kernel, None).unwrap();
        let a = exact.score(&tests).unwrap();
        let b = low_rank.score(&tests).unwrap();
        for (u, v) in a.scores().iter().zip(b.scores()) {
            assert_relative_eq!(u, v, max_relative = 1e-6, epsilon = 1e-10);
        }
    }

    #[test]
    fn alias_is_identical() {
        let x = cloud(40, 3, 4);
        let kernel = Kernel::rbf(1.0).unwrap();
        let a = nrx_fit(&x, 15, 9, kernel, None).unwrap();
        let b = lrx_fit(&x, 15, 9, kernel, None).unwrap();
        assert_eq!(a.score(&x).unwrap().scores(), b.score(&x).unwrap().scores());
    }

    #[test]
    fn landmark_order_does_not_matter() {
        let x = cloud(60, 3, 5);
        let kernel = Kernel::rbf(0.5).unwrap();
        let rows: Vec<usize> = vec![3, 8, 11, 17, 21, 29, 31, 40, 44, 52, 57, 59];
        let mut shuffled = rows.clone();
        shuffled.swap(0, 7);
        shuffled.swap(2, 9);
        shuffled.swap(4, 11);
        let a = nrx_fit_rows(&x, &rows, kernel, &NrxOptions::default()).unwrap();
        let b = nrx_fit_rows(&x, &shuffled, kernel, &NrxOptions::default()).unwrap();
        let sa = a.score(&x).unwrap();
        let sb = b.score(&x).unwrap();
        for (u, v) in sa.scores().iter().zip(sb.scores()) {
            assert_relative_eq!(u, v, max_relative = 1e-8, epsilon = 1e-12);
        }
    }

    #[test]
    fn centering_drops_one_direction() {
        let x = cloud(50, 3, 6);
        let model = nrx_fit(&x, 20, 1, Kernel::rbf(0.5).unwrap(), None).unwrap();
        let FittedDetector::Nrx(m) = &model else {
            unreachable!()
        };
        assert!(m.rank() < 20, "rank {} should lose the ones direction", m.rank());
    }

    #[test]
    fn duplicate_landmarks_stay_finite() {
        let x = cloud(30, 3, 7);
        let rows = vec![0, 1, 1, 2, 5, 5, 5, 9, 12, 20];
        let model = nrx_fit_rows(&x, &rows, Kernel::rbf(0.8).unwrap(), &NrxOptions::default())
            .unwrap();
        let field = model.score(&x).unwrap();
        assert!(field.scores().iter().all(|s| s.is_finite()));
    }

    #[test]
    fn unsimplified_form_agrees_with_compact_form() {
        let x = cloud(40, 3, 8);
        let tests = cloud(12, 3, 9);
        let kernel = Kernel::rbf(0.5).unwrap();
        let rows: Vec<usize> = (0..40).step_by(3).collect();
        let compact = nrx_fit_rows(&x, &rows, kernel, &NrxOptions::default()).unwrap();
        let a = compact.score(&tests).unwrap();
        let b = nrx_score_unsimplified(&x, &rows, kernel, None, None, &tests).unwrap();
        for (u, v) in a.scores().iter().zip(&b) {
            assert_relative_eq!(u, v, max_relative = 1e-4, epsilon = 1e-9);
        }
    }

    #[test]
    fn rejects_bad_landmark_counts() {
        let x = cloud(20, 3, 10);
        let kernel = Kernel::rbf(1.0).unwrap();
        assert!(nrx_fit(&x, 0, 1, kernel, None).is_err());
        assert!(nrx_fit(&x, 21, 1, kernel, None).is_err());
        assert!(nrx_fit(&x, 1, 1, kernel, None).is_err());
        let capped = NrxOptions {
            max_gram: 5,
            ..NrxOptions::default()
        };
        assert!(matches!(
            nrx_fit_with(&x, 10, 1, kernel, &capped).unwrap_err(),
            Error::TooLarge { n: 10, cap: 5 }
        ));
    }
}
