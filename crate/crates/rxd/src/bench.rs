//! Timing and scaling harness: wall-clock fit/score measurement, size and
//! rank sweeps, and a CSV schema for downstream plotting.
//!
//! Runs are warmed up once (untimed) and then repeated; reported times are
//! medians over the timed repeats. Peak memory is a dominant-allocation
//! estimate derived from each detector's fit path, not a resident-set
//! measurement.

use crate::data::DataMatrix;
use crate::detect::{DetectorKind, DetectorSpec};
use crate::eval::{roc_auc, GroundTruthMask};
use crate::synth::{synth_scene, BackgroundModel, SceneSpec};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// One timed detector run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingRecord {
    pub detector: String,
    /// Training pixels.
    pub n: usize,
    /// Bands.
    pub d: usize,
    /// Rank / feature count, for detectors that have one.
    pub rank: Option<usize>,
    pub seed: u64,
    /// Median fit wall-clock seconds over the timed repeats.
    pub fit_seconds: f64,
    /// Median score wall-clock seconds over the timed repeats.
    pub score_seconds: f64,
    /// AUC against ground truth, when truth was supplied.
    pub auc: Option<f64>,
    /// Dominant-allocation peak estimate in bytes.
    pub peak_bytes: usize,
}

/// Column header matching [`csv_line`].
pub const CSV_HEADER: &str = "detector,n,d,rank,seed,fit_s,score_s,auc";

/// Formats one record as a CSV row under [`CSV_HEADER`].
pub fn csv_line(r: &TimingRecord) -> String {
    format!(
        "{},{},{},{},{},{:.6},{:.6},{}",
        r.detector,
        r.n,
        r.d,
        r.rank.map(|v| v.to_string()).unwrap_or_default(),
        r.seed,
        r.fit_seconds,
        r.score_seconds,
        r.auc.map(|v| format!("{v:.6}")).unwrap_or_default(),
    )
}

/// Renders records as a full CSV document.
pub fn csv_report(records: &[TimingRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&csv_line(r));
        out.push('\n');
    }
    out
}

/// Caps the dense linear-algebra backend at `threads` worker threads;
/// `1` forces fully sequential execution for reproducible timing.
///
/// Blocked scoring additionally fans out over a rayon pool; to pin that
/// side as well, either build the global rayon pool with one thread or
/// use a block size at least as large as the scene.
pub fn set_math_parallelism(threads: usize) {
    if threads <= 1 {
        faer::set_global_parallelism(faer::Par::Seq);
    } else {
        faer::set_global_parallelism(faer::Par::rayon(threads));
    }
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Upper-bound estimate of the largest allocations a fit holds at once,
/// mirroring each detector's fit path.
pub fn fit_peak_bytes(kind: DetectorKind, n: usize, d: usize, rank: Option<usize>) -> usize {
    const W: usize = 8;
    match kind {
        // Centered copy of the data plus a handful of d x d matrices.
        DetectorKind::Rx => (n * d + 3 * d * d) * W,
        // Kernel matrix and its centered product coexist briefly.
        DetectorKind::Krx => 2 * n * n * W + n * d * W,
        DetectorKind::Srx => {
            let m = rank.unwrap_or(n).min(n);
            2 * m * m * W + n * d * W
        }
        // Feature matrix and its centered copy, plus the 2D x 2D system.
        DetectorKind::Rrx | DetectorKind::Orx => {
            let f = 2 * rank.unwrap_or(crate::detect::DEFAULT_RANK);
            (2 * n * f + 2 * f * f) * W
        }
        // Landmark cross-kernel plus the r x r factors.
        DetectorKind::Nrx => {
            let r = rank.unwrap_or(crate::detect::DEFAULT_RANK).min(n);
            (n * r + 3 * r * r) * W
        }
    }
}

/// Fits `spec` on `train` and scores `test`, timing both phases.
///
/// One untimed warm-up run absorbs lazy initialization; the reported times
/// are medians over `repeats` further runs. `repeats` must be at least 1.
pub fn time_detector(
    spec: &DetectorSpec,
    train: &DataMatrix,
    test: &DataMatrix,
    truth: Option<&GroundTruthMask>,
    repeats: usize,
) -> Result<TimingRecord> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let mut fit_times = Vec::with_capacity(repeats);
    let mut score_times = Vec::with_capacity(repeats);
    let mut auc = None;
    let mut resident = 0;
    // Warm-up plus timed repeats; iteration 0 is discarded.
    for it in 0..=repeats {
        let t0 = Instant::now();
        let model = spec.fit(train)?;
        let fit_s = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let scores = model.score(test)?;
        let score_s = t1.elapsed().as_secs_f64();
        if it == 0 {
            resident = model.memory_bytes();
            if let Some(mask) = truth {
                auc = Some(roc_auc(scores.scores(), mask)?);
            }
            continue;
        }
        fit_times.push(fit_s);
        score_times.push(score_s);
    }
    Ok(TimingRecord {
        detector: spec.kind.name().to_string(),
        n: train.n(),
        d: train.d(),
        rank: if spec.kind.uses_rank() { spec.rank } else { None },
        seed: spec.seed,
        fit_seconds: median_of(fit_times),
        score_seconds: median_of(score_times),
        auc,
        peak_bytes: resident.max(fit_peak_bytes(
            spec.kind,
            train.n(),
            train.d(),
            spec.rank,
        )),
    })
}

/// Times `base` across training sizes, on synthetic single-Gaussian scenes.
///
/// Each size `n` is rendered as an `n/w x w` scene (widest `w <= 50` that
/// divides `n`) with `d` bands, generated from `seed`; the scene itself is
/// scored. Returns one record per size, in order.
pub fn scaling_sweep(
    base: &DetectorSpec,
    sizes: &[usize],
    d: usize,
    seed: u64,
    repeats: usize,
) -> Result<Vec<TimingRecord>> {
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let w = (1..=50.min(n)).rev().find(|w| n % w == 0).unwrap_or(1);
        let scene = synth_scene(&SceneSpec {
            height: n / w,
            width: w,
            bands: d,
            fraction: 0.01,
            separation: 8.0,
            background: BackgroundModel::SingleGaussian,
            seed,
        })?;
        let mut spec = base.clone();
        spec.seed = seed;
        // Keep the kernel cap out of the way; sweeps choose sizes on purpose.
        spec.max_gram = spec.max_gram.max(n);
        out.push(time_detector(
            &spec,
            &scene.image,
            &scene.image,
            scene.truth.as_ref(),
            repeats,
        )?);
    }
    Ok(out)
}

/// Times `base` at each rank in `ranks` for each seed, scoring `x` against
/// `truth` when given. Records are ordered rank-major.
pub fn rank_sweep(
    base: &DetectorSpec,
    ranks: &[usize],
    x: &DataMatrix,
    truth: Option<&GroundTruthMask>,
    seeds: &[u64],
    repeats: usize,
) -> Result<Vec<TimingRecord>> {
    if !base.kind.uses_rank() {
        return Err(Error::invalid(format!(
            "{} has no rank parameter to sweep",
            base.kind
        )));
    }
    let mut out = Vec::with_capacity(ranks.len() * seeds.len());
    for &rank in ranks {
        for &seed in seeds {
            let mut spec = base.clone();
            spec.rank = Some(rank);
            spec.seed = seed;
            out.push(time_detector(&spec, x, x, truth, repeats)?);
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln(y)` against `ln(x)`: the empirical scaling
/// exponent of a timing series.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("slope needs two or more matched points"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("slope needs positive finite values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if var == 0.0 {
        return Err(Error::invalid("slope needs at least two distinct sizes"));
    }
    Ok(cov / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::SigmaSpec;

    #[test]
    fn slope_of_exact_power_laws() {
        let xs = [1000.0, 2000.0, 4000.0, 8000.0];
        let lin: Vec<f64> = xs.iter().map(|x| 3e-6 * x).collect();
        let cub: Vec<f64> = xs.iter().map(|x| 1e-9 * x * x * x).collect();
        assert!((log_log_slope(&xs, &lin).unwrap() - 1.0).abs() < 1e-12);
        assert!((log_log_slope(&xs, &cub).unwrap() - 3.0).abs() < 1e-12);
        assert!(log_log_slope(&xs, &[1.0, 1.0]).is_err());
        assert!((log_log_slope(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0])).is_err());
        assert!(log_log_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn timing_record_round_trip_through_csv() {
        let r = TimingRecord {
            detector: "nrx".into(),
            n: 4000,
            d: 20,
            rank: Some(100),
            seed: 7,
            fit_seconds: 0.25,
            score_seconds: 0.125,
            auc: Some(0.875),
            peak_bytes: 1 << 20,
        };
        let doc = csv_report(std::slice::from_ref(&r));
        let mut lines = doc.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("nrx,4000,20,100,7,0.250000,0.125000,0.875000"));
        let bare = TimingRecord {
            rank: None,
            auc: None,
            ..r
        };
        assert_eq!(csv_line(&bare), "nrx,4000,20,,7,0.250000,0.125000,");
    }

    #[test]
    fn timed_run_produces_sane_record() {
        let scene = synth_scene(&SceneSpec {
            height: 20,
            width: 30,
            bands: 5,
            fraction: 0.02,
            separation: 10.0,
            background: BackgroundModel::SingleGaussian,
            seed: 4,
        })
        .unwrap();
        let spec = DetectorSpec::new(DetectorKind::Rx);
        let rec = time_detector(
            &spec,
            &scene.image,
            &scene.image,
            scene.truth.as_ref(),
            3,
        )
        .unwrap();
        assert_eq!(rec.detector, "rx");
        assert_eq!((rec.n, rec.d), (600, 5));
        assert!(rec.fit_seconds >= 0.0 && rec.score_seconds >= 0.0);
        assert!(rec.auc.unwrap() > 0.99);
        assert!(rec.peak_bytes > 0);
        assert!(time_detector(&spec, &scene.image, &scene.image, None, 0).is_err());
    }

    #[test]
    fn feature_and_landmark_memory_stays_linear_in_n() {
        // The dominant fit allocations stay within 3x the feature/landmark
        // matrix footprint once n dominates the rank.
        for n in [1000usize, 4000, 8000] {
            let rrx = fit_peak_bytes(DetectorKind::Rrx, n, 20, Some(100));
            assert!(rrx <= 3 * n * 200 * 8, "rrx {rrx} at n={n}");
            let nrx = fit_peak_bytes(DetectorKind::Nrx, n, 20, Some(100));
            assert!(nrx <= 3 * n * 100 * 8, "nrx {nrx} at n={n}");
        }
    }

    #[test]
    fn rank_sweep_orders_records_rank_major() {
        let scene = synth_scene(&SceneSpec {
            height: 15,
            width: 20,
            bands: 4,
            fraction: 0.02,
            separation: 8.0,
            background: BackgroundModel::SingleGaussian,
            seed: 5,
        })
        .unwrap();
        let mut base = DetectorSpec::new(DetectorKind::Nrx);
        base.sigma = SigmaSpec::Value(3.0);
        let recs = rank_sweep(
            &base,
            &[20, 40],
            &scene.image,
            scene.truth.as_ref(),
            &[1, 2],
            1,
        )
        .unwrap();
        assert_eq!(recs.len(), 4);
        let got: Vec<(Option<usize>, u64)> = recs.iter().map(|r| (r.rank, r.seed)).collect();
        assert_eq!(
            got,
            vec![(Some(20), 1), (Some(20), 2), (Some(40), 1), (Some(40), 2)]
        );
        assert!(recs.iter().all(|r| r.auc.is_some()));

        let rx = DetectorSpec::new(DetectorKind::Rx);
        assert!(rank_sweep(&rx, &[10], &scene.image, None, &[1], 1).is_err());
    }

    #[test]
    fn scaling_sweep_covers_requested_sizes() {
        let mut base = DetectorSpec::new(DetectorKind::Rx);
        base.block_size = 4096;
        let recs = scaling_sweep(&base, &[300, 600], 4, 9, 1).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].n, 300);
        assert_eq!(recs[1].n, 600);
        assert!(recs.iter().all(|r| r.auc.is_some()));
    }
}
