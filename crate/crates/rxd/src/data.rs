//! Pixel data layout and first/second-moment statistics.
//!
//! A scene is held as an `n x d` matrix: one row per pixel, one column per
//! band. The optional `(height, width)` shape records the raster layout so
//! scores can be written back as an image; algorithms only ever see the flat
//! row view.

use crate::{Error, Mat, Result};

/// Background or test data: `n` pixels by `d` bands, optionally carrying the
/// raster shape the rows were flattened from (row-major).
#[derive(Debug, Clone)]
pub struct DataMatrix {
    values: Mat,
    shape: Option<(usize, usize)>,
}

impl DataMatrix {
    /// Wraps an `n x d` matrix, checking that it is non-empty and finite and
    /// that `shape`, if given, satisfies `height * width == n`.
    pub fn new(values: Mat, shape: Option<(usize, usize)>) -> Result<Self> {
        let (n, d) = (values.nrows(), values.ncols());
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("empty data matrix ({n} x {d})")));
        }
        if let Some((h, w)) = shape {
            if h * w != n {
                return Err(Error::shape(
                    format!("{h} x {w} = {} pixels", h * w),
                    format!("{n} rows"),
                ));
            }
        }
        for j in 0..d {
            for i in 0..n {
                let v = values[(i, j)];
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite value {v} at pixel {i}, band {j}"
                    )));
                }
            }
        }
        Ok(Self { values, shape })
    }

    /// Like [`DataMatrix::new`] without a raster shape.
    pub fn from_values(values: Mat) -> Result<Self> {
        Self::new(values, None)
    }

    /// Number of pixels (rows).
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of bands (columns).
    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    /// Raster shape, if the data came from (or is destined for) an image.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.shape
    }

    /// The raw `n x d` values.
    pub fn values(&self) -> &Mat {
        &self.values
    }

    /// Copies the pixels at `rows` (ascending or not) into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Mat {
        let d = self.d();
        let mut out = Mat::zeros(rows.len(), d);
        for (k, &r) in rows.iter().enumerate() {
            for j in 0..d {
                out[(k, j)] = self.values[(r, j)];
            }
        }
        out
    }
}

/// Column means removed by [`center_columns`]; reapplied to test pixels so
/// they are expressed in the same frame as the background.
#[derive(Debug, Clone)]
pub struct CenteringStats {
    means: Vec<f64>,
}

impl CenteringStats {
    /// Per-column means of the fitted background.
    pub fn means(&self) -> &[f64] {
        &self.means
    }

    /// Subtracts the stored means from every row of `x` in place.
    ///
    /// Panics if the column count differs from the fitted one.
    pub fn center_in_place(&self, x: &mut Mat) {
        assert_eq!(x.ncols(), self.means.len(), "band count mismatch");
        for j in 0..x.ncols() {
            let m = self.means[j];
            for i in 0..x.nrows() {
                x[(i, j)] -= m;
            }
        }
    }
}

/// Removes the column means of `x`, returning the centered matrix and the
/// means. Centering is idempotent: re-centering the output subtracts means
/// that are already ~0.
pub fn center_columns(x: &Mat) -> (Mat, CenteringStats) {
    let (n, d) = (x.nrows(), x.ncols());
    let mut means = vec![0.0f64; d];
    for j in 0..d {
        let mut s = 0.0;
        for i in 0..n {
            s += x[(i, j)];
        }
        means[j] = s / n as f64;
    }
    let mut xc = x.clone();
    let stats = CenteringStats { means };
    stats.center_in_place(&mut xc);
    (xc, stats)
}

/// Covariance `(1/n) Xc^T Xc` of an already column-centered matrix.
///
/// The result is exactly symmetric (the lower triangle is mirrored) and
/// positive semidefinite up to roundoff.
pub fn covariance(xc: &Mat) -> Mat {
    let n = xc.nrows() as f64;
    let mut cov = xc.transpose() * xc;
    let d = cov.nrows();
    for j in 0..d {
        for i in j..d {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}
