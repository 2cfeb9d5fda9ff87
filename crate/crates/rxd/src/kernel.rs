//! Kernels, Gram matrices, and kernel-space centering.
//!
//! The working kernel is the Gaussian RBF `k(x, y) = exp(-||x - y||^2 / (2
//! sigma^2))`. A plain inner-product kernel is also provided because detectors
//! built on it collapse to their linear counterparts, which the test suite
//! uses as an oracle; it is not intended for production use.
//!
//! Gram matrices are built from the expansion `||x - y||^2 = ||x||^2 +
//! ||y||^2 - 2 x^T y` so the dominant cost is one gemm; tiny negative
//! squared distances from cancellation are clamped to zero.

use serde::{Deserialize, Serialize};

use crate::rng::{sample_indices, seeded_rng};
use crate::{Error, Mat, Result};

/// Kernel function selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    /// Gaussian RBF with bandwidth `sigma`.
    Rbf { sigma: f64 },
    /// Plain inner product `x^T y` (validation oracle: kernel detectors using
    /// it reduce to their linear counterparts).
    Linear,
}

impl Kernel {
    /// RBF kernel; `sigma` must be positive and finite.
    pub fn rbf(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid(format!("kernel bandwidth must be positive, got {sigma}")));
        }
        Ok(Kernel::Rbf { sigma })
    }

    /// Inner-product kernel (see type-level note).
    pub fn linear() -> Self {
        Kernel::Linear
    }

    /// Evaluates `k(x, y)` on two equal-length slices.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        assert_eq!(x.len(), y.len(), "dimension mismatch");
        match *self {
            Kernel::Rbf { sigma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            }
            Kernel::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        }
    }
}

fn row_sq_norms(x: &Mat) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| (0..x.ncols()).map(|j| x[(i, j)] * x[(i, j)]).sum())
        .collect()
}

/// Cross-kernel matrix: entry `(i, j)` is `k(a_i, b_j)` for rows `a_i` of `a`
/// and `b_j` of `b`. Shape `a.nrows() x b.nrows()`.
pub fn kernel_matrix(a: &Mat, b: &Mat, kernel: Kernel) -> Result<Mat> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape(
            format!("{} bands", a.ncols()),
            format!("{} bands", b.ncols()),
        ));
    }
    let cross = a * b.transpose();
    match kernel {
        Kernel::Linear => Ok(cross),
        Kernel::Rbf { sigma } => {
            let na = row_sq_norms(a);
            let nb = row_sq_norms(b);
            let inv = 1.0 / (2.0 * sigma * sigma);
            let mut k = cross;
            for j in 0..k.ncols() {
                for i in 0..k.nrows() {
                    let d2 = (na[i] + nb[j] - 2.0 * k[(i, j)]).max(0.0);
                    k[(i, j)] = (-d2 * inv).exp();
                }
            }
            Ok(k)
        }
    }
}

/// Kernel matrix of `x` against itself, exactly symmetric (the lower triangle
/// is computed and mirrored).
pub fn kernel_matrix_symmetric(x: &Mat, kernel: Kernel) -> Result<Mat> {
    let cross = x * x.transpose();
    let n = x.nrows();
    let mut k = cross;
    match kernel {
        Kernel::Linear => {}
        Kernel::Rbf { sigma } => {
            let norms = row_sq_norms(x);
            let inv = 1.0 / (2.0 * sigma * sigma);
            for j in 0..n {
                for i in j..n {
                    let d2 = (norms[i] + norms[j] - 2.0 * k[(i, j)]).max(0.0);
                    k[(i, j)] = (-d2 * inv).exp();
                }
            }
        }
    }
    for j in 0..n {
        for i in (j + 1)..n {
            k[(j, i)] = k[(i, j)];
        }
    }
    Ok(k)
}

/// Row means and grand mean of a training Gram matrix; everything needed to
/// center test columns consistently with the training centering.
#[derive(Debug, Clone)]
pub struct KernelCenteringStats {
    row_means: Vec<f64>,
    grand_mean: f64,
}

impl KernelCenteringStats {
    /// Per-row means of the training Gram matrix.
    pub fn row_means(&self) -> &[f64] {
        &self.row_means
    }

    /// Mean of all Gram entries; always the mean of `row_means`.
    pub fn grand_mean(&self) -> f64 {
        self.grand_mean
    }
}

/// Double-centers a symmetric training Gram matrix:
/// `K~_ij = K_ij - m_i - m_j + g` with `m` the row means and `g` the grand
/// mean (the feature-space translation that puts the mapped data at the
/// origin). Returns the centered matrix (exactly symmetric, rows and columns
/// summing to ~0) and the stats needed to center test vectors the same way.
pub fn center_kernel_train(k: &Mat) -> Result<(Mat, KernelCenteringStats)> {
    if k.nrows() != k.ncols() {
        return Err(Error::shape(
            "square Gram matrix",
            format!("{} x {}", k.nrows(), k.ncols()),
        ));
    }
    let n = k.nrows();
    let mut row_means = vec![0.0f64; n];
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += k[(i, j)];
        }
        row_means[i] = s / n as f64;
    }
    let grand_mean = row_means.iter().sum::<f64>() / n as f64;
    let mut kc = Mat::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = k[(i, j)] - row_means[i] - row_means[j] + grand_mean;
            kc[(i, j)] = v;
            kc[(j, i)] = v;
        }
    }
    Ok((kc, KernelCenteringStats { row_means, grand_mean }))
}

/// Centers test-kernel columns consistently with [`center_kernel_train`]:
/// for a column `k*` (one test point against all training points),
/// `k~*_i = k*_i - m_i - mean(k*) + g`. Applied to training columns this
/// reproduces the centered training Gram exactly.
pub fn center_kernel_test(k_star: &mut Mat, stats: &KernelCenteringStats) {
    let n = stats.row_means.len();
    assert_eq!(k_star.nrows(), n, "test kernel rows must match training size");
    for j in 0..k_star.ncols() {
        let mut cm = 0.0;
        for i in 0..n {
            cm += k_star[(i, j)];
        }
        cm = cm / n as f64 - stats.grand_mean;
        for i in 0..n {
            k_star[(i, j)] -= stats.row_means[i] + cm;
        }
    }
}

/// Bandwidth from the median heuristic: the median pairwise distance over a
/// seeded subsample of at most `sample_size` pixels (average of the two middle
/// order statistics for even counts).
///
/// Fails with [`Error::DegenerateData`] when the median distance is zero
/// (fewer than two distinct points, or a majority of duplicates).
pub fn median_heuristic_sigma(x: &Mat, sample_size: usize, seed: u64) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 pixels for the median heuristic, got {n}"
        )));
    }
    let m = sample_size.max(2).min(n);
    let idx = sample_indices(n, m, &mut seeded_rng(seed));
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in (a + 1)..m {
            let (ia, ib) = (idx[a], idx[b]);
            let d2: f64 = (0..x.ncols())
                .map(|j| {
                    let t = x[(ia, j)] - x[(ib, j)];
                    t * t
                })
                .sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let len = dists.len();
    let median = if len % 2 == 1 {
        dists[len / 2]
    } else {
        0.5 * (dists[len / 2 - 1] + dists[len / 2])
    };
    if median <= 0.0 {
        return Err(Error::DegenerateData(
            "median pairwise distance is zero (too many identical pixels)".into(),
        ));
    }
    Ok(median)
}
