//! Detection quality evaluation: ROC curves, AUC, threshold selection,
//! rank correlation and parameter grid search.
//!
//! AUC is computed from the rank statistic (average ranks over ties), which
//! agrees with the trapezoid integral of the ROC curve to floating-point
//! accuracy; both are exposed so they can be cross-checked.

use crate::data::DataMatrix;
use crate::detect::{DetectorKind, DetectorSpec, SigmaSpec};
use crate::{Error, Result};
use serde::Serialize;

/// Per-pixel anomaly labels, with the image shape when known.
#[derive(Debug, Clone)]
pub struct GroundTruthMask {
    labels: Vec<bool>,
    shape: Option<(usize, usize)>,
}

impl GroundTruthMask {
    /// Wraps labels, checking the shape product when a shape is given.
    pub fn new(labels: Vec<bool>, shape: Option<(usize, usize)>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("empty ground-truth mask"));
        }
        if let Some((h, w)) = shape {
            if h * w != labels.len() {
                return Err(Error::shape(
                    format!("{h}x{w} = {} labels", h * w),
                    format!("{}", labels.len()),
                ));
            }
        }
        Ok(GroundTruthMask { labels, shape })
    }

    /// One label per pixel, in input order.
    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    /// Image height and width, if known.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.shape
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// True when the mask is empty.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of anomalous pixels.
    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

fn check_scores(scores: &[f64], mask: &GroundTruthMask) -> Result<(usize, usize)> {
    if scores.len() != mask.len() {
        return Err(Error::shape(
            format!("{} labels", mask.len()),
            format!("{} scores", scores.len()),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite scores in evaluation"));
    }
    let pos = mask.anomaly_count();
    let neg = mask.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateData(format!(
            "need both classes to evaluate, got {pos} anomalous / {neg} background"
        )));
    }
    Ok((pos, neg))
}

/// 1-based ranks with ties averaged.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve from the rank statistic. Ties contribute half,
/// so the value equals the trapezoid integral of [`roc_points`] exactly.
pub fn roc_auc(scores: &[f64], mask: &GroundTruthMask) -> Result<f64> {
    let (pos, neg) = check_scores(scores, mask)?;
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(mask.labels())
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let pos_f = pos as f64;
    Ok((rank_sum - pos_f * (pos_f + 1.0) / 2.0) / (pos_f * neg as f64))
}

/// One operating point of the ROC curve: classify anomalous when the score
/// is at least `threshold`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// The full ROC curve, from (0,0) at an infinite threshold down to (1,1),
/// with one point per distinct score value.
pub fn roc_points(scores: &[f64], mask: &GroundTruthMask) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_scores(scores, mask)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            if mask.labels()[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: value,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(points)
}

/// Trapezoid integral of a ROC curve produced by [`roc_points`].
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// An operating point chosen to maximize the difference between true- and
/// false-positive rates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ThresholdChoice {
    /// Midpoint between the adjacent distinct scores realizing the point
    /// (the smallest score itself when everything is classified anomalous).
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// The maximized difference `tpr - fpr`.
    pub youden: f64,
}

/// Picks the ROC operating point with the largest `tpr - fpr`; among ties
/// the strictest (highest-threshold) point wins.
pub fn best_threshold(scores: &[f64], mask: &GroundTruthMask) -> Result<ThresholdChoice> {
    let points = roc_points(scores, mask)?;
    let mut best = ThresholdChoice {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
        youden: 0.0,
    };
    // points[k] classifies "score >= points[k].threshold" as anomalous; any
    // threshold in (next distinct score, this score] acts identically, so
    // report the midpoint of that interval.
    for (k, point) in points.iter().enumerate().skip(1) {
        let youden = point.tpr - point.fpr;
        if youden > best.youden {
            let threshold = match points.get(k + 1) {
                Some(next) => (point.threshold + next.threshold) / 2.0,
                None => point.threshold,
            };
            best = ThresholdChoice {
                threshold,
                tpr: point.tpr,
                fpr: point.fpr,
                youden,
            };
        }
    }
    Ok(best)
}

/// Binary detection map: true where the score reaches the threshold.
pub fn detection_map(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s >= threshold).collect()
}

/// Rank correlation with ties averaged: Pearson correlation of the two rank
/// vectors. Fails when either input has no rank spread.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(
            format!("{} values", a.len()),
            format!("{} values", b.len()),
        ));
    }
    if a.len() < 2 {
        return Err(Error::invalid("rank correlation needs at least 2 values"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite values in rank correlation"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        let (dx, dy) = (x - mean, y - mean);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateData(
            "rank correlation undefined when one input is constant".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// AUC plus the chosen operating point, as reported by the evaluation
/// command.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub auc: f64,
    pub threshold: ThresholdChoice,
    pub anomalous: usize,
    pub background: usize,
    /// Pixels flagged at the chosen threshold.
    pub detections: usize,
}

/// Evaluates scores against ground truth: AUC, best threshold, counts.
pub fn evaluate(scores: &[f64], mask: &GroundTruthMask) -> Result<EvalSummary> {
    let (pos, neg) = check_scores(scores, mask)?;
    let auc = roc_auc(scores, mask)?;
    let threshold = best_threshold(scores, mask)?;
    let detections = detection_map(scores, threshold.threshold)
        .iter()
        .filter(|&&d| d)
        .count();
    Ok(EvalSummary {
        auc,
        threshold,
        anomalous: pos,
        background: neg,
        detections,
    })
}

/// One evaluated cell of a parameter grid.
#[derive(Debug, Clone, Serialize)]
pub struct GridPoint {
    /// Kernel width, absent for the plain Mahalanobis detector.
    pub sigma: Option<f64>,
    /// Subsample / landmark / frequency count, absent when not applicable.
    pub rank: Option<usize>,
    /// AUC per seed, in seed order; failed fits are skipped.
    pub aucs: Vec<f64>,
    /// Seeds whose fit or scoring failed.
    pub failures: usize,
    /// Mean of `aucs`, absent when every seed failed.
    pub mean_auc: Option<f64>,
}

/// All grid cells plus the index of the winning one.
#[derive(Debug, Clone, Serialize)]
pub struct GridReport {
    pub detector: DetectorKind,
    pub seeds: Vec<u64>,
    pub points: Vec<GridPoint>,
    /// Index into `points` of the best cell, if any cell succeeded.
    pub best: Option<usize>,
}

impl GridReport {
    /// The winning cell, if any.
    pub fn best_point(&self) -> Option<&GridPoint> {
        self.best.map(|i| &self.points[i])
    }
}

/// Fits and evaluates the detector across a kernel-width and rank grid,
/// averaging AUC over seeds. Individual fit failures are logged and counted
/// but do not abort the search. The best cell has the highest mean AUC; ties
/// prefer the smaller rank, then the smaller width.
pub fn grid_search(
    base: &DetectorSpec,
    x: &DataMatrix,
    mask: &GroundTruthMask,
    sigmas: &[f64],
    ranks: &[usize],
    seeds: &[u64],
) -> Result<GridReport> {
    if x.n() != mask.len() {
        return Err(Error::shape(
            format!("{} pixels", x.n()),
            format!("{} labels", mask.len()),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("grid search needs at least one seed"));
    }
    let sigmas: Vec<Option<f64>> = if base.kind.uses_kernel() {
        if sigmas.is_empty() {
            return Err(Error::invalid("grid search needs at least one kernel width"));
        }
        sigmas.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let ranks: Vec<Option<usize>> = if base.kind.uses_rank() {
        if ranks.is_empty() {
            return Err(Error::invalid("grid search needs at least one rank"));
        }
        ranks.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };

    let mut points = Vec::with_capacity(sigmas.len() * ranks.len());
    for &sigma in &sigmas {
        for &rank in &ranks {
            let mut aucs = Vec::with_capacity(seeds.len());
            let mut failures = 0;
            for &seed in seeds {
                let mut spec = base.clone();
                if let Some(s) = sigma {
                    spec.sigma = SigmaSpec::Value(s);
                }
                spec.rank = rank;
                spec.seed = seed;
                match spec
                    .fit(x)
                    .and_then(|m| m.score(x))
                    .and_then(|f| roc_auc(f.scores(), mask))
                {
                    Ok(auc) => aucs.push(auc),
                    Err(err) => {
                        log::warn!(
                            "grid cell sigma={sigma:?} rank={rank:?} seed={seed} failed: {err}"
                        );
                        failures += 1;
                    }
                }
            }
            let mean_auc = if aucs.is_empty() {
                None
            } else {
                Some(aucs.iter().sum::<f64>() / aucs.len() as f64)
            };
            points.push(GridPoint {
                sigma,
                rank,
                aucs,
                failures,
                mean_auc,
            });
        }
    }

    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        let Some(mean) = p.mean_auc else { continue };
        let better = match best {
            None => true,
            Some(j) => {
                let q = &points[j];
                let qmean = q.mean_auc.unwrap();
                mean > qmean
                    || (mean == qmean
                        && (p.rank < q.rank || (p.rank == q.rank && p.sigma < q.sigma)))
            }
        };
        if better {
            best = Some(i);
        }
    }

    Ok(GridReport {
        detector: base.kind,
        seeds: seeds.to_vec(),
        points,
        best,
    })
}
