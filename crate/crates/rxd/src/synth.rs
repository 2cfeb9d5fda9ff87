//! Synthetic scene generator: seeded multiband images with planted anomaly
//! blobs and ground truth, at two difficulty levels.
//!
//! * `none` — single-Gaussian background with per-band scales; anomalies are
//!   mean-shifted along a random direction by `separation` background
//!   standard deviations. Linear whitening separates these easily.
//! * `mixture` — three well-separated Gaussian components; anomalies sit in
//!   the empty region at the global centroid, `separation` standard
//!   deviations away from every component mean. The pooled mean coincides
//!   with the anomaly location, so a single global covariance model scores
//!   the anomalies as the most ordinary pixels in the scene, while
//!   kernel-based detectors see an isolated low-density cluster.

use crate::data::DataMatrix;
use crate::eval::GroundTruthMask;
use crate::rng::seeded_rng;
use crate::{Error, Mat, Result};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Shape of the synthetic background distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundModel {
    /// One Gaussian component ("none" on the command line: no nonlinearity).
    #[serde(rename = "none")]
    SingleGaussian,
    /// Three separated Gaussian components.
    Mixture,
}

impl std::fmt::Display for BackgroundModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackgroundModel::SingleGaussian => "none",
            BackgroundModel::Mixture => "mixture",
        })
    }
}

impl std::str::FromStr for BackgroundModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "gaussian" => Ok(BackgroundModel::SingleGaussian),
            "mixture" => Ok(BackgroundModel::Mixture),
            other => Err(Error::invalid(format!(
                "unknown background model {other:?}; expected none or mixture"
            ))),
        }
    }
}

/// Parameters of a synthetic scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    /// Fraction of pixels that are anomalous, in (0, 0.1]. The exact count
    /// is `round(fraction * pixels)`.
    pub fraction: f64,
    /// Distance, in background standard deviations, from the anomaly center
    /// to the background mean (single Gaussian) or to every component mean
    /// (mixture).
    pub separation: f64,
    pub background: BackgroundModel,
    pub seed: u64,
}

impl SceneSpec {
    /// Total pixel count.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Number of anomalous pixels this spec plants.
    pub fn anomaly_count(&self) -> usize {
        (self.fraction * self.pixels() as f64).round() as usize
    }
}

/// A generated or loaded scene: image, optional ground truth, and a
/// human-readable provenance line.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub image: DataMatrix,
    pub truth: Option<GroundTruthMask>,
    pub provenance: String,
}

/// Generates the scene described by `spec`, bit-identically per seed.
pub fn synth_scene(spec: &SceneSpec) -> Result<SceneBundle> {
    if spec.height == 0 || spec.width == 0 || spec.bands == 0 {
        return Err(Error::invalid("scene dimensions must be positive"));
    }
    if !(spec.fraction > 0.0 && spec.fraction <= 0.1) {
        return Err(Error::invalid(format!(
            "anomaly fraction must be in (0, 0.1], got {}",
            spec.fraction
        )));
    }
    if !(spec.separation.is_finite() && spec.separation >= 0.0) {
        return Err(Error::invalid(format!(
            "separation must be finite and nonnegative, got {}",
            spec.separation
        )));
    }
    let n = spec.pixels();
    let count = spec.anomaly_count();
    if count == 0 {
        return Err(Error::invalid(format!(
            "fraction {} of {} pixels rounds to zero anomalies",
            spec.fraction, n
        )));
    }
    if count >= n {
        return Err(Error::invalid("anomalies would cover the whole scene"));
    }

    let mut rng = seeded_rng(spec.seed);
    let (labels, blobs) = plant_blobs(spec.height, spec.width, count, &mut rng);
    let values = match spec.background {
        BackgroundModel::SingleGaussian => single_gaussian(spec, &labels, &mut rng),
        BackgroundModel::Mixture => mixture(spec, &labels, &blobs, &mut rng),
    };

    let image = DataMatrix::new(values, Some((spec.height, spec.width)))?;
    let truth = GroundTruthMask::new(labels, Some((spec.height, spec.width)))?;
    let provenance = format!(
        "synthetic scene: {}x{}x{} background={} fraction={} separation={} seed={}",
        spec.height, spec.width, spec.bands, spec.background, spec.fraction,
        spec.separation, spec.seed
    );
    Ok(SceneBundle {
        image,
        truth: Some(truth),
        provenance,
    })
}

/// Marks exactly `count` pixels as anomalous, grown as 2x2 blobs at seeded
/// positions (the last blob may be partial). Returns the label mask plus the
/// pixel indices of each blob, so callers can give every blob its own
/// spectral signature.
fn plant_blobs(
    height: usize,
    width: usize,
    count: usize,
    rng: &mut ChaCha20Rng,
) -> (Vec<bool>, Vec<Vec<usize>>) {
    let n = height * width;
    let mut labels = vec![false; n];
    let mut blobs: Vec<Vec<usize>> = Vec::new();
    let mut marked = 0;
    let mut stalled = 0;
    while marked < count {
        let r = rng.random_range(0..height);
        let c = rng.random_range(0..width);
        let mut blob = Vec::new();
        for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let (rr, cc) = (r + dr, c + dc);
            if rr < height && cc < width && marked < count && !labels[rr * width + cc] {
                labels[rr * width + cc] = true;
                blob.push(rr * width + cc);
                marked += 1;
            }
        }
        if blob.is_empty() {
            stalled += 1;
            // Dense masks can make random placement thrash; fall back to the
            // first unmarked pixel to guarantee termination.
            if stalled > 8 * n {
                let free = labels.iter().position(|&l| !l).expect("count < n");
                labels[free] = true;
                blobs.push(vec![free]);
                marked += 1;
            }
        } else {
            stalled = 0;
            blobs.push(blob);
        }
    }
    (labels, blobs)
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// A uniformly random unit vector.
fn unit_vector(d: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn single_gaussian(spec: &SceneSpec, labels: &[bool], rng: &mut ChaCha20Rng) -> Mat {
    let (n, d) = (spec.pixels(), spec.bands);
    let band_mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let band_scale: Vec<f64> = (0..d).map(|_| rng.random_range(0.6..1.4)).collect();
    let direction = unit_vector(d, rng);
    let mut values = Mat::zeros(n, d);
    for i in 0..n {
        for j in 0..d {
            // Offset of `separation` whitened units along a fixed direction.
            let shift = if labels[i] {
                spec.separation * direction[j] * band_scale[j]
            } else {
                0.0
            };
            values[(i, j)] = band_mean[j] + band_scale[j] * normal(rng) + shift;
        }
    }
    values
}

fn mixture(spec: &SceneSpec, labels: &[bool], blobs: &[Vec<usize>], rng: &mut ChaCha20Rng) -> Mat {
    let (n, d) = (spec.pixels(), spec.bands);
    let band_mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    // Component means on an equilateral triangle of circumradius `separation`
    // in a random 2-plane; their centroid is the origin.
    let e1 = unit_vector(d, rng);
    let e2 = {
        // Orthonormalize a second direction against the first.
        let raw = unit_vector(d, rng);
        let dot: f64 = raw.iter().zip(&e1).map(|(a, b)| a * b).sum();
        let v: Vec<f64> = raw.iter().zip(&e1).map(|(a, b)| a - dot * b).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect::<Vec<f64>>()
    };
    let angles = [0.0, 2.0 * std::f64::consts::PI / 3.0, 4.0 * std::f64::consts::PI / 3.0];
    let means: Vec<Vec<f64>> = angles
        .iter()
        .map(|a| {
            (0..d)
                .map(|j| spec.separation * (a.cos() * e1[j] + a.sin() * e2[j]))
                .collect()
        })
        .collect();
    let scales: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..d).map(|_| rng.random_range(0.5..1.5)).collect())
        .collect();

    // Each blob is a distinct small target in the sparse interior between
    // the components. Targets stay inside the 2-plane spanned by the
    // component means, where the pooled variance is dominated by
    // between-component spread, so a global mean/covariance model sees them
    // as thoroughly ordinary; their neighborhoods are nearly empty, so
    // kernel models do not. Centers are kept mutually distant so no single
    // target population grows large enough to look like background.
    let min_gap = 0.2 * spec.separation;
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(blobs.len());
    for _ in 0..blobs.len() {
        let mut best: Option<((f64, f64), f64)> = None;
        for _ in 0..64 {
            let radius = spec.separation * rng.random_range(0.15..0.6);
            let angle = rng.random_range(0.0..2.0 * std::f64::consts::PI);
            let cand = (radius * angle.cos(), radius * angle.sin());
            let nearest = centers
                .iter()
                .map(|c| ((c.0 - cand.0).powi(2) + (c.1 - cand.1).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|&(_, b)| nearest > b) {
                best = Some((cand, nearest));
            }
            if nearest >= min_gap {
                break;
            }
        }
        centers.push(best.expect("at least one draw").0);
    }

    let anomaly_spread = 0.3;
    let mut values = Mat::zeros(n, d);
    for i in 0..n {
        if !labels[i] {
            let c = rng.random_range(0..3);
            for j in 0..d {
                values[(i, j)] = band_mean[j] + means[c][j] + scales[c][j] * normal(rng);
            }
        } else {
            // Filled below, blob by blob, so a blob's pixels share a center.
            continue;
        }
    }
    for (blob, &(u, v)) in blobs.iter().zip(&centers) {
        for &i in blob {
            for j in 0..d {
                let center = u * e1[j] + v * e2[j];
                values[(i, j)] = band_mean[j] + center + anomaly_spread * normal(rng);
            }
        }
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{rx_fit, DetectorKind, DetectorSpec};
    use crate::eval::roc_auc;

    fn base_spec() -> SceneSpec {
        SceneSpec {
            height: 40,
            width: 50,
            bands: 5,
            fraction: 0.01,
            separation: 6.0,
            background: BackgroundModel::SingleGaussian,
            seed: 1,
        }
    }

    #[test]
    fn anomaly_count_is_exact() {
        // 0.0023 of 200x200 pixels is exactly 92.
        let spec = SceneSpec {
            height: 200,
            width: 200,
            bands: 3,
            fraction: 0.0023,
            ..base_spec()
        };
        assert_eq!(spec.anomaly_count(), 92);
        let scene = synth_scene(&spec).unwrap();
        assert_eq!(scene.truth.unwrap().anomaly_count(), 92);

        let small = SceneSpec {
            height: 10,
            width: 10,
            fraction: 0.035,
            ..base_spec()
        };
        assert_eq!(synth_scene(&small).unwrap().truth.unwrap().anomaly_count(), 4);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = base_spec();
        let a = synth_scene(&spec).unwrap();
        let b = synth_scene(&spec).unwrap();
        assert_eq!(a.image.values().as_ref(), b.image.values().as_ref());
        assert_eq!(
            a.truth.as_ref().unwrap().labels(),
            b.truth.as_ref().unwrap().labels()
        );
        let c = synth_scene(&SceneSpec {
            seed: 2,
            ..base_spec()
        })
        .unwrap();
        assert_ne!(a.image.values().as_ref(), c.image.values().as_ref());
    }

    #[test]
    fn wide_separation_is_linearly_trivial() {
        // A 20-sigma shift leaves essentially no class overlap.
        let spec = SceneSpec {
            separation: 20.0,
            ..base_spec()
        };
        let scene = synth_scene(&spec).unwrap();
        let truth = scene.truth.unwrap();
        let model = rx_fit(&scene.image, None).unwrap();
        let scores = model.score(&scene.image).unwrap();
        let auc = roc_auc(scores.scores(), &truth).unwrap();
        assert!(auc >= 0.999, "auc {auc}");
    }

    #[test]
    fn mixture_defeats_plain_whitening_but_not_kernels() {
        let spec = SceneSpec {
            height: 40,
            width: 40,
            bands: 20,
            fraction: 0.01,
            separation: 12.0,
            background: BackgroundModel::Mixture,
            seed: 3,
        };
        let scene = synth_scene(&spec).unwrap();
        let truth = scene.truth.unwrap();

        let rx = rx_fit(&scene.image, None).unwrap();
        let rx_auc = roc_auc(rx.score(&scene.image).unwrap().scores(), &truth).unwrap();

        // Interior targets hide from the pooled covariance but not from a
        // low-rank kernel model with a moderately sharp bandwidth.
        let sigma =
            0.4 * crate::kernel::median_heuristic_sigma(scene.image.values(), 1000, 3).unwrap();
        let mut nrx_spec = DetectorSpec::new(DetectorKind::Nrx);
        nrx_spec.sigma = crate::detect::SigmaSpec::Value(sigma);
        nrx_spec.rank = Some(100);
        nrx_spec.seed = 3;
        let nrx = nrx_spec.fit(&scene.image).unwrap();
        let nrx_auc = roc_auc(nrx.score(&scene.image).unwrap().scores(), &truth).unwrap();

        assert!(rx_auc < 0.3, "whitening should miss interior targets, auc {rx_auc}");
        assert!(
            nrx_auc > rx_auc + 0.3,
            "kernel {nrx_auc} vs linear {rx_auc}"
        );
    }

    #[test]
    fn blob_labels_are_spatially_clustered() {
        let spec = SceneSpec {
            height: 60,
            width: 60,
            fraction: 0.01,
            ..base_spec()
        };
        let scene = synth_scene(&spec).unwrap();
        let truth = scene.truth.unwrap();
        let labels = truth.labels();
        // Most anomalous pixels touch another anomalous pixel (blobs, not
        // salt-and-pepper noise).
        let (h, w) = (60usize, 60usize);
        let mut with_neighbor = 0;
        let mut total = 0;
        for r in 0..h {
            for c in 0..w {
                if !labels[r * w + c] {
                    continue;
                }
                total += 1;
                let neighbors = [
                    (r.wrapping_sub(1), c),
                    (r + 1, c),
                    (r, c.wrapping_sub(1)),
                    (r, c + 1),
                ];
                if neighbors
                    .iter()
                    .any(|&(rr, cc)| rr < h && cc < w && labels[rr * w + cc])
                {
                    with_neighbor += 1;
                }
            }
        }
        assert!(total > 0);
        assert!(
            with_neighbor * 10 >= total * 8,
            "{with_neighbor}/{total} have neighbors"
        );
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(synth_scene(&SceneSpec {
            fraction: 0.0,
            ..base_spec()
        })
        .is_err());
        assert!(synth_scene(&SceneSpec {
            fraction: 0.2,
            ..base_spec()
        })
        .is_err());
        assert!(synth_scene(&SceneSpec {
            height: 0,
            ..base_spec()
        })
        .is_err());
        // Fraction so small it rounds to zero anomalies.
        assert!(synth_scene(&SceneSpec {
            height: 10,
            width: 10,
            fraction: 0.001,
            ..base_spec()
        })
        .is_err());
        assert!(synth_scene(&SceneSpec {
            separation: f64::NAN,
            ..base_spec()
        })
        .is_err());
    }
}
