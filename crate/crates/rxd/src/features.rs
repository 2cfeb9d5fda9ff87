//! Random Fourier feature maps for the RBF kernel.
//!
//! A frequency matrix `W` (one frequency per row) turns a pixel `x` into the
//! feature vector
//!
//! ```text
//! z(x) = (1/sqrt(D)) [cos(w_1^T x), sin(w_1^T x), ..., cos(w_D^T x), sin(w_D^T x)]
//! ```
//!
//! so that `z(x)^T z(y)` is an unbiased Monte-Carlo estimate of the RBF kernel
//! and `||z(x)||^2 = 1` exactly. Frequencies are either drawn i.i.d. from
//! `N(0, sigma^-2 I)` ([`sample_rff`]) or as scaled rows of uniformly random
//! orthogonal matrices ([`sample_orf`]), which keeps the same marginal
//! distribution per row while decorrelating rows inside each `d x d` block and
//! empirically lowers the kernel-approximation variance.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::seeded_rng;
use crate::{Error, Mat, Result};

/// How the frequency rows were drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Independent Gaussian frequencies.
    Fourier,
    /// Block-orthogonal frequencies (chi-scaled rows of Haar orthogonal
    /// matrices).
    Orthogonal,
}

/// A sampled `n_freq x d` frequency matrix together with its provenance.
#[derive(Debug, Clone)]
pub struct FrequencyMatrix {
    weights: Mat,
    kind: FeatureKind,
    sigma: f64,
}

impl FrequencyMatrix {
    /// The `n_freq x d` frequency rows.
    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    /// Number of frequencies `D` (feature dimension is `2 D`).
    pub fn n_freq(&self) -> usize {
        self.weights.nrows()
    }

    /// Input dimension `d`.
    pub fn d(&self) -> usize {
        self.weights.ncols()
    }

    /// Sampling scheme used.
    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    /// Bandwidth the frequencies were scaled for.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

fn check_dims(d: usize, n_freq: usize, sigma: f64) -> Result<()> {
    if d == 0 || n_freq == 0 {
        return Err(Error::invalid(format!(
            "frequency matrix needs d > 0 and n_freq > 0, got d={d}, n_freq={n_freq}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {sigma}")));
    }
    Ok(())
}

/// Draws `n_freq` i.i.d. frequencies from `N(0, sigma^-2 I_d)`.
/// Fully determined by `(d, n_freq, sigma, seed)`.
pub fn sample_rff(d: usize, n_freq: usize, sigma: f64, seed: u64) -> Result<FrequencyMatrix> {
    check_dims(d, n_freq, sigma)?;
    let mut rng = seeded_rng(seed);
    let mut w = Mat::zeros(n_freq, d);
    let inv_sigma = 1.0 / sigma;
    for i in 0..n_freq {
        for j in 0..d {
            let g: f64 = rng.sample(StandardNormal);
            w[(i, j)] = g * inv_sigma;
        }
    }
    Ok(FrequencyMatrix { weights: w, kind: FeatureKind::Fourier, sigma })
}

/// One Haar-distributed `d x d` orthogonal matrix (QR of a Gaussian matrix
/// with the sign of `diag(R)` folded into the columns of `Q`).
fn haar_orthogonal(d: usize, rng: &mut ChaCha20Rng) -> Mat {
    let mut g = Mat::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            g[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let qr = g.qr();
    let r = qr.R();
    let mut q = qr.compute_Q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Draws `n_freq` block-orthogonal frequencies: for each block of `d` rows,
/// a Haar orthogonal `Q` is sampled and row `i` is scaled by an independent
/// chi(d) draw divided by `sigma`, matching the row-norm distribution of
/// [`sample_rff`]. Blocks are stacked and truncated to `n_freq` rows.
pub fn sample_orf(d: usize, n_freq: usize, sigma: f64, seed: u64) -> Result<FrequencyMatrix> {
    check_dims(d, n_freq, sigma)?;
    let chi2 = ChiSquared::new(d as f64)
        .map_err(|e| Error::invalid(format!("chi-squared({d}) unavailable: {e}")))?;
    let mut rng = seeded_rng(seed);
    let mut w = Mat::zeros(n_freq, d);
    let inv_sigma = 1.0 / sigma;
    let mut row = 0usize;
    while row < n_freq {
        let q = haar_orthogonal(d, &mut rng);
        let take = d.min(n_freq - row);
        for i in 0..take {
            let scale = rng.sample::<f64, _>(chi2).sqrt() * inv_sigma;
            for j in 0..d {
                w[(row + i, j)] = q[(i, j)] * scale;
            }
        }
        row += take;
    }
    Ok(FrequencyMatrix { weights: w, kind: FeatureKind::Orthogonal, sigma })
}

/// Maps every row of `x` through the feature expansion, producing an
/// `n x 2 n_freq` matrix with interleaved `[cos, sin]` pairs scaled by
/// `1 / sqrt(n_freq)`; every output row has unit squared norm.
pub fn feature_map(x: &Mat, freqs: &FrequencyMatrix) -> Result<Mat> {
    if x.ncols() != freqs.d() {
        return Err(Error::shape(
            format!("{} bands", freqs.d()),
            format!("{} bands", x.ncols()),
        ));
    }
    let n = x.nrows();
    let nf = freqs.n_freq();
    let phase = x * freqs.weights().transpose();
    let scale = 1.0 / (nf as f64).sqrt();
    let mut z = Mat::zeros(n, 2 * nf);
    for k in 0..nf {
        for i in 0..n {
            let (s, c) = phase[(i, k)].sin_cos();
            z[(i, 2 * k)] = c * scale;
            z[(i, 2 * k + 1)] = s * scale;
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use rand::Rng;

    fn random_points(n: usize, d: usize, scale: f64, seed: u64) -> Mat {
        let mut rng = seeded_rng(seed);
        let mut m = Mat::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                m[(i, j)] = rng.sample::<f64, _>(StandardNormal) * scale;
            }
        }
        m
    }

    fn approx_kernel(z: &Mat, i: usize, j: usize) -> f64 {
        (0..z.ncols()).map(|k| z[(i, k)] * z[(j, k)]).sum()
    }

    #[test]
    fn rff_is_deterministic_per_seed() {
        let a = sample_rff(5, 64, 1.5, 9).unwrap();
        let b = sample_rff(5, 64, 1.5, 9).unwrap();
        let c = sample_rff(5, 64, 1.5, 10).unwrap();
        assert_eq!(a.weights().as_ref(), b.weights().as_ref());
        assert_ne!(a.weights().as_ref(), c.weights().as_ref());
    }

    #[test]
    fn rff_entry_variance_matches_bandwidth() {
        let sigma = 2.0;
        let w = sample_rff(10, 10_000, sigma, 3).unwrap();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let n = (w.n_freq() * w.d()) as f64;
        for i in 0..w.n_freq() {
            for j in 0..w.d() {
                let v = w.weights()[(i, j)];
                sum += v;
                sumsq += v * v;
            }
        }
        let mean = sum / n;
        let var = sumsq / n - mean * mean;
        let expect = 1.0 / (sigma * sigma);
        assert!(
            (var - expect).abs() < 0.05 * expect,
            "variance {var} vs {expect}"
        );
    }

    #[test]
    fn rff_entries_look_gaussian() {
        let w = sample_rff(1, 10_000, 1.0, 4).unwrap();
        let vals: Vec<f64> = (0..10_000).map(|i| w.weights()[(i, 0)]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let m2 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = vals.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let m4 = vals.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let skew = m3 / m2.powf(1.5);
        let kurt = m4 / (m2 * m2);
        assert!(skew.abs() < 0.05, "skewness {skew}");
        assert!((kurt - 3.0).abs() < 0.1, "kurtosis {kurt}");
    }

    #[test]
    fn orf_blocks_are_orthogonal() {
        let d = 7;
        let w = sample_orf(d, 3 * d + 2, 1.3, 5).unwrap();
        let wm = w.weights();
        for block in 0..3 {
            for a in 0..d {
                for b in (a + 1)..d {
                    let (ia, ib) = (block * d + a, block * d + b);
                    let dot: f64 = (0..d).map(|j| wm[(ia, j)] * wm[(ib, j)]).sum();
                    let na: f64 = (0..d).map(|j| wm[(ia, j)].powi(2)).sum::<f64>().sqrt();
                    let nb: f64 = (0..d).map(|j| wm[(ib, j)].powi(2)).sum::<f64>().sqrt();
                    assert!(
                        dot.abs() <= 1e-10 * na * nb,
                        "rows {ia},{ib} not orthogonal: {dot}"
                    );
                }
            }
        }
    }

    #[test]
    fn orf_truncated_block_gives_diagonal_gram() {
        // n_freq <= d: a single truncated block, W W^T must be diagonal
        let d = 9;
        let nf = 5;
        let w = sample_orf(d, nf, 1.0, 6).unwrap();
        let g = w.weights() * w.weights().transpose();
        for i in 0..nf {
            for j in 0..nf {
                if i != j {
                    assert!(g[(i, j)].abs() < 1e-10 * (g[(i, i)] * g[(j, j)]).sqrt());
                }
            }
        }
    }

    #[test]
    fn orf_row_norms_match_chi_distribution() {
        let d = 8;
        let w = sample_orf(d, 10_000, 1.0, 7).unwrap();
        let mean_sq: f64 = (0..10_000)
            .map(|i| (0..d).map(|j| w.weights()[(i, j)].powi(2)).sum::<f64>())
            .sum::<f64>()
            / 10_000.0;
        assert!(
            (mean_sq - d as f64).abs() < 0.03 * d as f64,
            "mean squared row norm {mean_sq} vs {d}"
        );
    }

    #[test]
    fn feature_rows_have_unit_norm() {
        let x = random_points(50, 6, 2.0, 8);
        let w = sample_rff(6, 33, 1.7, 9).unwrap();
        let z = feature_map(&x, &w).unwrap();
        assert_eq!(z.ncols(), 66);
        for i in 0..50 {
            let n2: f64 = (0..66).map(|k| z[(i, k)] * z[(i, k)]).sum();
            assert!((n2 - 1.0).abs() < 1e-12, "row {i} squared norm {n2}");
        }
    }

    #[test]
    fn large_feature_count_approximates_rbf() {
        let sigma = 1.0;
        let x = random_points(2, 4, 0.5, 10);
        let kernel = Kernel::rbf(sigma).unwrap();
        let exact = kernel.eval(
            &(0..4).map(|j| x[(0, j)]).collect::<Vec<_>>(),
            &(0..4).map(|j| x[(1, j)]).collect::<Vec<_>>(),
        );
        for sampler in [sample_rff, sample_orf] {
            let w = sampler(4, 20_000, sigma, 11).unwrap();
            let z = feature_map(&x, &w).unwrap();
            let approx = approx_kernel(&z, 0, 1);
            assert!(
                (approx - exact).abs() < 0.02,
                "approximation {approx} vs exact {exact}"
            );
        }
    }

    #[test]
    fn approximation_error_shrinks_with_feature_count() {
        // max |z^T z - k| over a fixed pair set, median over seeds, must
        // strictly decrease through D = 100, 1000, 10000.
        let d = 5;
        let sigma = 1.2;
        let kernel = Kernel::rbf(sigma).unwrap();
        let pts = random_points(20, d, 0.8, 12);
        let pairs: Vec<(usize, usize)> = (0..20)
            .flat_map(|i| ((i + 1)..20).map(move |j| (i, j)))
            .take(50)
            .collect();
        let exact: Vec<f64> = pairs
            .iter()
            .map(|&(i, j)| {
                kernel.eval(
                    &(0..d).map(|c| pts[(i, c)]).collect::<Vec<_>>(),
                    &(0..d).map(|c| pts[(j, c)]).collect::<Vec<_>>(),
                )
            })
            .collect();
        let mut medians = Vec::new();
        for n_freq in [100usize, 1000, 10_000] {
            let mut errs: Vec<f64> = (0..20u64)
                .map(|seed| {
                    let w = sample_rff(d, n_freq, sigma, 100 + seed).unwrap();
                    let z = feature_map(&pts, &w).unwrap();
                    pairs
                        .iter()
                        .zip(&exact)
                        .map(|(&(i, j), &e)| (approx_kernel(&z, i, j) - e).abs())
                        .fold(0.0f64, f64::max)
                })
                .collect();
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(errs[errs.len() / 2]);
        }
        assert!(
            medians[0] > medians[1] && medians[1] > medians[2],
            "medians not decreasing: {medians:?}"
        );
    }

    #[test]
    fn orthogonal_features_beat_iid_features_on_mse() {
        // Mean squared kernel-approximation error over pairs and seeds;
        // orthogonal sampling must not lose to i.i.d. sampling at D = d.
        for d in [4usize, 16] {
            let sigma = 1.0;
            let kernel = Kernel::rbf(sigma).unwrap();
            // points scaled so typical pair distances sit near sigma
            let pts = random_points(30, d, sigma / (2.0 * d as f64).sqrt(), 20 + d as u64);
            let pairs: Vec<(usize, usize)> = (0..30)
                .flat_map(|i| ((i + 1)..30).map(move |j| (i, j)))
                .collect();
            let exact: Vec<f64> = pairs
                .iter()
                .map(|&(i, j)| {
                    kernel.eval(
                        &(0..d).map(|c| pts[(i, c)]).collect::<Vec<_>>(),
                        &(0..d).map(|c| pts[(j, c)]).collect::<Vec<_>>(),
                    )
                })
                .collect();
            let mse = |sampler: fn(usize, usize, f64, u64) -> Result<FrequencyMatrix>| -> f64 {
                let mut total = 0.0;
                let seeds = 60u64;
                for seed in 0..seeds {
                    let w = sampler(d, d, sigma, 1000 + seed).unwrap();
                    let z = feature_map(&pts, &w).unwrap();
                    for (&(i, j), &e) in pairs.iter().zip(&exact) {
                        total += (approx_kernel(&z, i, j) - e).powi(2);
                    }
                }
                total / (seeds as f64 * pairs.len() as f64)
            };
            let mse_iid = mse(sample_rff);
            let mse_orth = mse(sample_orf);
            assert!(
                mse_orth <= mse_iid,
                "d={d}: orthogonal MSE {mse_orth} > iid MSE {mse_iid}"
            );
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(sample_rff(0, 10, 1.0, 0).is_err());
        assert!(sample_rff(3, 0, 1.0, 0).is_err());
        assert!(sample_rff(3, 10, 0.0, 0).is_err());
        assert!(sample_orf(3, 10, -1.0, 0).is_err());
        let x = Mat::zeros(4, 3);
        let w = sample_rff(5, 8, 1.0, 0).unwrap();
        assert!(feature_map(&x, &w).is_err());
    }
}
