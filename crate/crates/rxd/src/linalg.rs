//! Factorizations behind every detector: ridged Cholesky solves and
//! truncated-eigendecomposition pseudoinverses.
//!
//! Detectors never form an explicit inverse. A quadratic form
//! `b^T (A + ridge I)^-1 b` is evaluated as `||L^-1 b||^2` from the Cholesky
//! factor, which is also what guarantees scores are nonnegative; rank-deficient
//! systems go through [`PinvFactor`], which clips eigenvalues below a relative
//! tolerance.

use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::linalg::solvers::{Llt, Solve};
use faer::{Accum, Par, Side};

use crate::{Error, Mat, Result};

/// Relative scale of the automatic ridge: `1e-8 * trace(A) / dim`.
pub const AUTO_RIDGE_SCALE: f64 = 1e-8;

/// Relative asymmetry above which a matrix is rejected as "not symmetric".
pub const SYMMETRY_TOL: f64 = 1e-10;

/// The ridge added to `A` when the caller does not fix one:
/// `1e-8 * trace(A) / dim` (zero for an all-zero matrix).
pub fn auto_ridge(a: &Mat) -> f64 {
    let dim = a.nrows();
    if dim == 0 {
        return 0.0;
    }
    let trace: f64 = (0..dim).map(|i| a[(i, i)]).sum();
    AUTO_RIDGE_SCALE * trace / dim as f64
}

fn check_square_symmetric(a: &Mat) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::shape(
            "square matrix",
            format!("{} x {}", a.nrows(), a.ncols()),
        ));
    }
    let mut max_abs = 0.0f64;
    let mut max_asym = 0.0f64;
    for j in 0..a.ncols() {
        for i in j..a.nrows() {
            max_abs = max_abs.max(a[(i, j)].abs());
            max_asym = max_asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if !max_abs.is_finite() {
        return Err(Error::invalid("non-finite matrix entries"));
    }
    if max_asym > SYMMETRY_TOL * max_abs.max(1e-300) {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {max_asym:.3e} vs scale {max_abs:.3e})"
        )));
    }
    Ok(())
}

/// Cholesky factorization of `A + ridge I` for a symmetric positive
/// (semi)definite `A`.
#[derive(Debug)]
pub struct SpdSolver {
    llt: Llt<f64>,
    ridge: f64,
    dim: usize,
}

/// Factors `A + ridge I`, with `None` meaning the automatic trace-scaled
/// ridge. Fails with [`Error::NotPositiveDefinite`] if the ridged matrix is
/// still not positive definite, and rejects asymmetric input.
pub fn spd_solve_prepare(a: &Mat, ridge: Option<f64>) -> Result<SpdSolver> {
    check_square_symmetric(a)?;
    let ridge = ridge.unwrap_or_else(|| auto_ridge(a));
    let dim = a.nrows();
    let mut work = a.clone();
    for i in 0..dim {
        work[(i, i)] += ridge;
    }
    let llt = work
        .llt(Side::Lower)
        .map_err(|_| Error::NotPositiveDefinite { dim, ridge })?;
    // The factorization can "succeed" with zero pivots on an exactly
    // singular matrix (e.g. all zeros); those factors cannot be solved with.
    let l = llt.L();
    for i in 0..dim {
        if !(l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
            return Err(Error::NotPositiveDefinite { dim, ridge });
        }
    }
    Ok(SpdSolver { llt, ridge, dim })
}

impl SpdSolver {
    /// Dimension of the factored matrix.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The ridge that was actually added.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Solves `(A + ridge I) X = B` for each column of `B`.
    pub fn solve(&self, b: &Mat) -> Mat {
        self.llt.solve(b)
    }

    /// Quadratic forms `b_j^T (A + ridge I)^-1 b_j` for every column `b_j`,
    /// computed as `||L^-1 b_j||^2` — nonnegative by construction.
    pub fn quad_forms(&self, b: &Mat) -> Vec<f64> {
        assert_eq!(b.nrows(), self.dim, "rhs dimension mismatch");
        let mut y = b.clone();
        faer::linalg::triangular_solve::solve_lower_triangular_in_place(
            self.llt.L(),
            y.as_mut(),
            Par::Seq,
        );
        (0..y.ncols())
            .map(|j| (0..y.nrows()).map(|i| y[(i, j)] * y[(i, j)]).sum())
            .collect()
    }

    /// Bytes held by the factor (dominant allocation).
    pub fn memory_bytes(&self) -> usize {
        self.dim * self.dim * std::mem::size_of::<f64>()
    }
}

/// Truncated eigendecomposition of a symmetric PSD matrix, acting as the
/// Moore–Penrose pseudoinverse `A^+`.
#[derive(Debug)]
pub struct PinvFactor {
    /// Eigenvectors of the retained (non-clipped) eigenvalues, one per column.
    basis: Mat,
    /// Retained eigenvalues, matching `basis` columns.
    eigs: Vec<f64>,
    dim: usize,
    tol: f64,
}

/// Eigendecomposes symmetric PSD `A` and clips eigenvalues at
/// `tol * lambda_max` (relative). `None` uses the default
/// `dim * machine_epsilon`. Eigenvalues that are nonpositive after clipping
/// are always dropped, so a zero matrix yields the zero operator.
pub fn pseudo_inverse(a: &Mat, tol: Option<f64>) -> Result<PinvFactor> {
    check_square_symmetric(a)?;
    let dim = a.nrows();
    let tol = tol.unwrap_or(dim as f64 * f64::EPSILON);
    let eig = a
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::invalid("eigendecomposition did not converge"))?;
    let u = eig.U();
    let s = eig.S();
    let lambda_max = (0..dim).map(|i| s[i]).fold(0.0f64, f64::max);
    let cut = tol * lambda_max;
    let keep: Vec<usize> = (0..dim).filter(|&i| s[i] > cut && s[i] > 0.0).collect();
    let mut basis = Mat::zeros(dim, keep.len());
    let mut eigs = Vec::with_capacity(keep.len());
    for (k, &i) in keep.iter().enumerate() {
        eigs.push(s[i]);
        for r in 0..dim {
            basis[(r, k)] = u[(r, i)];
        }
    }
    Ok(PinvFactor { basis, eigs, dim, tol })
}

impl PinvFactor {
    /// Dimension of the original matrix.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of retained eigenvalues.
    pub fn rank(&self) -> usize {
        self.eigs.len()
    }

    /// The relative clipping tolerance that was applied.
    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Applies `A^+` to every column of `b`.
    pub fn apply(&self, b: &Mat) -> Mat {
        assert_eq!(b.nrows(), self.dim, "rhs dimension mismatch");
        let mut proj = self.basis.transpose() * b;
        for k in 0..self.eigs.len() {
            let inv = 1.0 / self.eigs[k];
            for j in 0..proj.ncols() {
                proj[(k, j)] *= inv;
            }
        }
        &self.basis * proj
    }

    /// Quadratic forms `b_j^T A^+ b_j` for every column — the sum of
    /// `(u^T b)^2 / lambda` over retained eigenpairs, nonnegative by
    /// construction.
    pub fn quad_forms(&self, b: &Mat) -> Vec<f64> {
        assert_eq!(b.nrows(), self.dim, "rhs dimension mismatch");
        let proj = self.basis.transpose() * b;
        (0..proj.ncols())
            .map(|j| {
                (0..self.eigs.len())
                    .map(|k| proj[(k, j)] * proj[(k, j)] / self.eigs[k])
                    .sum()
            })
            .collect()
    }

    /// Materializes `A^+` (tests only — quadratic forms never need it).
    pub fn dense(&self) -> Mat {
        let mut scaled = self.basis.clone();
        for k in 0..self.eigs.len() {
            let inv = 1.0 / self.eigs[k];
            for r in 0..self.dim {
                scaled[(r, k)] *= inv;
            }
        }
        scaled * self.basis.transpose()
    }

    /// Bytes held by the retained basis (dominant allocation).
    pub fn memory_bytes(&self) -> usize {
        self.dim * self.eigs.len() * std::mem::size_of::<f64>()
    }
}

/// `B B^T`, computed on the lower triangle only and mirrored, so the result
/// is exactly symmetric.
pub fn gram_product(b: &Mat) -> Mat {
    let n = b.nrows();
    let mut out = Mat::zeros(n, n);
    triangular::matmul(
        out.as_mut(),
        BlockStructure::TriangularLower,
        Accum::Replace,
        b.as_ref(),
        BlockStructure::Rectangular,
        b.transpose(),
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
    for j in 0..n {
        for i in (j + 1)..n {
            out[(j, i)] = out[(i, j)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn random_mat(n: usize, d: usize, seed: u64) -> Mat {
        let mut rng = seeded_rng(seed);
        let mut m = Mat::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                m[(i, j)] = rng.random_range(-1.0..1.0);
            }
        }
        m
    }

    /// Random SPD matrix `B B^T + eps I` of the given dimension.
    fn random_spd(dim: usize, seed: u64) -> Mat {
        let b = random_mat(dim, dim + 3, seed);
        let mut a = gram_product(&b);
        for i in 0..dim {
            a[(i, i)] += 1e-3;
        }
        a
    }

    #[test]
    fn auto_ridge_is_trace_scaled() {
        let mut a = Mat::zeros(4, 4);
        for i in 0..4 {
            a[(i, i)] = (i + 1) as f64;
        }
        // trace 10, dim 4
        assert!((auto_ridge(&a) - 1e-8 * 10.0 / 4.0).abs() < 1e-24);
    }

    #[test]
    fn solve_residual_small_up_to_dim_500() {
        for &dim in &[5usize, 50, 500] {
            let a = random_spd(dim, dim as u64);
            let solver = spd_solve_prepare(&a, Some(0.0)).unwrap();
            let b = random_mat(dim, 3, 99);
            let x = solver.solve(&b);
            let r = &a * &x - &b;
            let rn = r.norm_l2() / b.norm_l2();
            assert!(rn < 1e-8, "dim {dim}: relative residual {rn:.3e}");
        }
    }

    #[test]
    fn quad_form_matches_solve() {
        let a = random_spd(30, 7);
        let solver = spd_solve_prepare(&a, None).unwrap();
        let b = random_mat(30, 4, 8);
        let x = solver.solve(&b);
        let qf = solver.quad_forms(&b);
        for j in 0..4 {
            let direct: f64 = (0..30).map(|i| b[(i, j)] * x[(i, j)]).sum();
            assert!(
                (qf[j] - direct).abs() <= 1e-10 * direct.abs().max(1.0),
                "column {j}: {} vs {direct}",
                qf[j]
            );
        }
    }

    #[test]
    fn quad_forms_nonnegative_even_near_singular() {
        let b = random_mat(20, 2, 3); // rank 2
        let a = gram_product(&b);
        let solver = spd_solve_prepare(&a, None).unwrap();
        let rhs = random_mat(20, 10, 4);
        for q in solver.quad_forms(&rhs) {
            assert!(q >= 0.0);
        }
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let mut a = random_spd(6, 10);
        a[(0, 5)] += 1.0;
        assert!(matches!(
            spd_solve_prepare(&a, None),
            Err(Error::InvalidData(_))
        ));

        let mut neg = Mat::zeros(3, 3);
        for i in 0..3 {
            neg[(i, i)] = -1.0;
        }
        assert!(matches!(
            spd_solve_prepare(&neg, Some(0.0)),
            Err(Error::NotPositiveDefinite { dim: 3, .. })
        ));
    }

    #[test]
    fn ridge_rescues_singular_matrix() {
        let b = random_mat(10, 2, 5);
        let a = gram_product(&b); // rank 2, singular
        assert!(spd_solve_prepare(&a, Some(0.0)).is_err());
        assert!(spd_solve_prepare(&a, Some(1e-6)).is_ok());
        // the automatic ridge also rescues it
        assert!(spd_solve_prepare(&a, None).is_ok());
    }

    #[test]
    fn pinv_recovers_inverse_on_full_rank() {
        let a = random_spd(25, 21);
        let pinv = pseudo_inverse(&a, None).unwrap();
        assert_eq!(pinv.rank(), 25);
        let prod = &a * pinv.dense();
        for i in 0..25 {
            for j in 0..25 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (prod[(i, j)] - expect).abs() < 1e-8,
                    "({i},{j}) = {}",
                    prod[(i, j)]
                );
            }
        }
    }

    #[test]
    fn pinv_on_rank_deficient_matrix() {
        // A = B B^T with B 20x5 has rank 5.
        let b = random_mat(20, 5, 2);
        let a = gram_product(&b);
        let pinv = pseudo_inverse(&a, None).unwrap();
        assert_eq!(pinv.rank(), 5);
        // Moore–Penrose identity A A^+ A = A.
        let apa = &a * pinv.dense() * &a;
        for i in 0..20 {
            for j in 0..20 {
                assert!(
                    (apa[(i, j)] - a[(i, j)]).abs() < 1e-8 * a.norm_max(),
                    "({i},{j})"
                );
            }
        }
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let z = Mat::zeros(6, 6);
        let pinv = pseudo_inverse(&z, None).unwrap();
        assert_eq!(pinv.rank(), 0);
        let rhs = random_mat(6, 2, 1);
        for q in pinv.quad_forms(&rhs) {
            assert_eq!(q, 0.0);
        }
    }

    #[test]
    fn pinv_quad_form_matches_dense() {
        let b = random_mat(15, 6, 13);
        let a = gram_product(&b);
        let pinv = pseudo_inverse(&a, None).unwrap();
        let rhs = random_mat(15, 3, 14);
        let dense = pinv.dense();
        let qf = pinv.quad_forms(&rhs);
        for j in 0..3 {
            let mut direct = 0.0;
            for i in 0..15 {
                let mut t = 0.0;
                for k in 0..15 {
                    t += dense[(i, k)] * rhs[(k, j)];
                }
                direct += rhs[(i, j)] * t;
            }
            assert!((qf[j] - direct).abs() < 1e-9 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn gram_product_is_exactly_symmetric_and_correct() {
        let b = random_mat(12, 7, 31);
        let g = gram_product(&b);
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(g[(i, j)], g[(j, i)]);
                let direct: f64 = (0..7).map(|k| b[(i, k)] * b[(j, k)]).sum();
                assert!((g[(i, j)] - direct).abs() < 1e-12 * direct.abs().max(1.0));
            }
        }
    }
}
