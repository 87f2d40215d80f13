//! Segmentation, topology, agreement, and classification metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::morphology::{connected_components, vessel_mask, BinaryMask, Connectivity};
use crate::raster_io::{Class, LabelMap, Shaped};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("need at least {needed} subjects, got {got}")]
    TooFewSubjects { needed: usize, got: usize },
    #[error("zero variance: agreement is undefined")]
    ZeroVariance,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("sample is empty")]
    EmptySample,
    #[error("only one label value present")]
    SingleClass,
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("bootstrap data is empty")]
    EmptyData,
    #[error("no bootstrap resample produced a finite statistic")]
    DegenerateBootstrap,
    #[error("exact p-value requires tie-free samples")]
    TiesInExact,
    #[error("patch size must be positive")]
    BadPatch,
}

fn check_shape<A: Shaped, B: Shaped>(a: &A, b: &B) -> Result<(), MetricsError> {
    if a.shape() != b.shape() {
        return Err(MetricsError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub class: Class,
    pub f1: f64,
    pub iou: f64,
    /// Mean squared 0/1 disagreement on the class plane (a fraction, not ×100).
    pub mse: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub gt_pixels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub f1: f64,
    pub iou: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegScores {
    /// Classes present in at least one of the two maps.
    pub per_class: Vec<ClassScores>,
    /// Weighted by ground-truth pixel share; uniform when the ground truth has no vessels.
    /// `None` when neither map contains a vessel class.
    pub weighted: Option<Aggregate>,
}

pub fn seg_scores(pred: &LabelMap, gt: &LabelMap) -> Result<SegScores, MetricsError> {
    check_shape(pred, gt)?;
    let n = pred.labels().len();
    let mut per_class = Vec::new();
    for class in Class::VESSELS {
        let id = class.id();
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            match (p == id, g == id) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        if tp + fp + fn_ == 0 {
            continue;
        }
        per_class.push(ClassScores {
            class,
            f1: 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64,
            iou: tp as f64 / (tp + fp + fn_) as f64,
            mse: (fp + fn_) as f64 / n as f64,
            tp,
            fp,
            fn_,
            gt_pixels: tp + fn_,
        });
    }
    let total_gt: usize = per_class.iter().map(|c| c.gt_pixels).sum();
    let weighted = (!per_class.is_empty()).then(|| {
        let weight = |c: &ClassScores| {
            if total_gt > 0 {
                c.gt_pixels as f64 / total_gt as f64
            } else {
                1.0 / per_class.len() as f64
            }
        };
        Aggregate {
            f1: per_class.iter().map(|c| weight(c) * c.f1).sum(),
            iou: per_class.iter().map(|c| weight(c) * c.iou).sum(),
            mse: per_class.iter().map(|c| weight(c) * c.mse).sum(),
        }
    });
    Ok(SegScores { per_class, weighted })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BettiPair {
    pub b0: usize,
    pub b1: usize,
}

/// b0 from 8-connected foreground, b1 from 4-connected background of the mask padded by one ring.
pub fn betti_numbers(mask: &BinaryMask) -> BettiPair {
    let b0 = connected_components(mask, Connectivity::Eight).count;
    let background = mask.padded(1).inverted();
    let b1 = connected_components(&background, Connectivity::Four).count - 1;
    BettiPair { b0, b1 }
}

fn betti_delta(a: BettiPair, b: BettiPair) -> f64 {
    (a.b0.abs_diff(b.b0) + a.b1.abs_diff(b.b1)) as f64
}

const BETTI_CLASSES: [Class; 2] = [Class::Artery, Class::Vein];

/// Mean over artery and vein of |Δb0| + |Δb1| on the whole map.
pub fn betti_error(pred: &LabelMap, gt: &LabelMap) -> Result<f64, MetricsError> {
    check_shape(pred, gt)?;
    let sum: f64 = BETTI_CLASSES
        .iter()
        .map(|&c| betti_delta(betti_numbers(&vessel_mask(pred, c)), betti_numbers(&vessel_mask(gt, c))))
        .sum();
    Ok(sum / BETTI_CLASSES.len() as f64)
}

/// Betti error averaged over a non-overlapping `patch`×`patch` grid (edge patches may be smaller).
pub fn betti_error_patched(pred: &LabelMap, gt: &LabelMap, patch: usize) -> Result<f64, MetricsError> {
    check_shape(pred, gt)?;
    if patch == 0 {
        return Err(MetricsError::BadPatch);
    }
    let masks: Vec<(BinaryMask, BinaryMask)> = BETTI_CLASSES
        .iter()
        .map(|&c| (vessel_mask(pred, c), vessel_mask(gt, c)))
        .collect();
    let (h, w) = pred.shape();
    let mut total = 0.0;
    let mut patches = 0usize;
    for r in (0..h).step_by(patch) {
        for c in (0..w).step_by(patch) {
            let sum: f64 = masks
                .iter()
                .map(|(p, g)| {
                    betti_delta(
                        betti_numbers(&p.window(r, c, patch, patch)),
                        betti_numbers(&g.window(r, c, patch, patch)),
                    )
                })
                .sum();
            total += sum / masks.len() as f64;
            patches += 1;
        }
    }
    Ok(total / patches as f64)
}

/// Mean squares of the two-way layout (subjects × 2 raters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSquares {
    pub rows: f64,
    pub columns: f64,
    pub error: f64,
}

pub fn two_way_mean_squares(pairs: &[(f64, f64)]) -> MeanSquares {
    let n = pairs.len() as f64;
    let k = 2.0;
    let grand = pairs.iter().map(|(a, b)| a + b).sum::<f64>() / (n * k);
    let col_a = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let col_b = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let ss_rows: f64 = pairs.iter().map(|(a, b)| k * ((a + b) / k - grand).powi(2)).sum();
    let ss_cols = n * ((col_a - grand).powi(2) + (col_b - grand).powi(2));
    let ss_total: f64 = pairs
        .iter()
        .map(|(a, b)| (a - grand).powi(2) + (b - grand).powi(2))
        .sum();
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);
    MeanSquares {
        rows: ss_rows / (n - 1.0),
        columns: ss_cols / (k - 1.0),
        error: ss_error / ((n - 1.0) * (k - 1.0)),
    }
}

/// ICC(2,1): two-way random effects, absolute agreement, single measurement.
pub fn icc_point(pairs: &[(f64, f64)]) -> Result<f64, MetricsError> {
    if pairs.len() < 3 {
        return Err(MetricsError::TooFewSubjects {
            needed: 3,
            got: pairs.len(),
        });
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let first = pairs[0].0;
    if pairs.iter().all(|&(a, b)| a == first && b == first) {
        return Err(MetricsError::ZeroVariance);
    }
    let k = 2.0;
    let n = pairs.len() as f64;
    let ms = two_way_mean_squares(pairs);
    let denom = ms.rows + (k - 1.0) * ms.error + k / n * (ms.columns - ms.error);
    if denom.is_nan() || denom <= 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((ms.rows - ms.error) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IccResult {
    pub icc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub subjects: usize,
}

pub const ICC_RESAMPLES: usize = 2000;

/// ICC(2,1) with a percentile bootstrap CI over subjects (2.5th and 97.5th percentiles).
pub fn icc(pairs: &[(f64, f64)], seed: u64) -> Result<IccResult, MetricsError> {
    let point = icc_point(pairs)?;
    let cfg = BootstrapConfig {
        resamples: ICC_RESAMPLES,
        low_percentile: 2.5,
        high_percentile: 97.5,
        seed,
    };
    let (ci_low, ci_high) = bootstrap_ci(pairs, |sample| icc_point(sample).unwrap_or(f64::NAN), &cfg)?;
    Ok(IccResult {
        icc: point,
        ci_low,
        ci_high,
        subjects: pairs.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    /// Enumeration of the null distribution of U.
    Exact,
    /// Normal approximation with tie and continuity corrections.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// Pairs with a > b, ties counted half.
    pub u_a: f64,
    pub u_b: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Largest n·m for which the exact null distribution is used.
pub const EXACT_LIMIT: usize = 64;

/// Midranks (1-based) of the pooled values, plus the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut groups = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        groups.push(end - start);
        start = end;
    }
    (ranks, groups)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, MetricsError> {
    mann_whitney_u_with(a, b, None)
}

/// `method = None` picks exact enumeration when n·m ≤ [`EXACT_LIMIT`] and there are no ties.
pub fn mann_whitney_u_with(a: &[f64], b: &[f64], method: Option<PValueMethod>) -> Result<MannWhitney, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let (n, m) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, groups) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n].iter().sum();
    let u_a = rank_sum_a - (n * (n + 1)) as f64 / 2.0;
    let u_b = (n * m) as f64 - u_a;
    let has_ties = groups.iter().any(|&g| g > 1);
    let method = method.unwrap_or(if n * m <= EXACT_LIMIT && !has_ties {
        PValueMethod::Exact
    } else {
        PValueMethod::Normal
    });
    let p_value = match method {
        PValueMethod::Exact => {
            if has_ties {
                return Err(MetricsError::TiesInExact);
            }
            exact_p_value(n, m, u_a.round() as usize)
        }
        PValueMethod::Normal => normal_p_value(n, m, u_a, &groups),
    };
    Ok(MannWhitney {
        u_a,
        u_b,
        p_value,
        method,
    })
}

/// Number of arrangements giving each U, for sample sizes (n, m).
fn u_distribution(n: usize, m: usize) -> Vec<u64> {
    // f[i][j][u]: ways with i items from a and j from b; the largest element
    // is either from a (adds j to U) or from b (adds nothing).
    let mut f = vec![vec![Vec::<u64>::new(); m + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=m {
            let mut dist = vec![0u64; i * j + 1];
            if i == 0 || j == 0 {
                dist[0] = 1;
            } else {
                for (u, &c) in f[i - 1][j].iter().enumerate() {
                    dist[u + j] += c;
                }
                for (u, &c) in f[i][j - 1].iter().enumerate() {
                    dist[u] += c;
                }
            }
            f[i][j] = dist;
        }
    }
    std::mem::take(&mut f[n][m])
}

fn exact_p_value(n: usize, m: usize, u: usize) -> f64 {
    let dist = u_distribution(n, m);
    let total: u64 = dist.iter().sum();
    let lower: u64 = dist[..=u].iter().sum();
    let upper: u64 = dist[u..].iter().sum();
    (2.0 * lower.min(upper) as f64 / total as f64).min(1.0)
}

fn normal_p_value(n: usize, m: usize, u: f64, groups: &[usize]) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    let total = nf + mf;
    let tie_term: f64 = groups.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (total * (total - 1.0));
    let variance = nf * mf / 12.0 * ((total + 1.0) - tie_term);
    if variance.is_nan() || variance <= 0.0 {
        return 1.0;
    }
    let z = ((u - nf * mf / 2.0).abs() - 0.5).max(0.0) / variance.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucPair {
    pub roc: f64,
    pub pr: f64,
}

fn check_binary(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((positives, negatives))
}

/// Twice the Mann–Whitney U of the positives: 2·concordant + tied pairs.
fn doubled_u(scores: &[f64], labels: &[u8]) -> u64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let mut doubled_rank_sum = 0u64;
    let mut positives = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 2 × midrank of ranks start+1..=end
        let doubled_rank = (start + end + 1) as u64;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] != 0).count() as u64;
        doubled_rank_sum += doubled_rank * pos_in_group;
        positives += pos_in_group;
        start = end;
    }
    doubled_rank_sum - positives * (positives + 1)
}

/// AUC-ROC as the pair rank statistic and AUC-PR as step-interpolated average precision.
pub fn roc_pr_auc(scores: &[f64], labels: &[u8]) -> Result<AucPair, MetricsError> {
    let (p, n) = check_binary(scores, labels)?;
    let roc = doubled_u(scores, labels) as f64 / (2 * p * n) as f64;
    Ok(AucPair {
        roc,
        pr: average_precision(scores, labels, p),
    })
}

pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    Ok(roc_pr_auc(scores, labels)?.roc)
}

fn descending_groups(scores: &[f64]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut groups = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        groups.push((start, end));
        start = end;
    }
    (order, groups)
}

fn average_precision(scores: &[f64], labels: &[u8], positives: usize) -> f64 {
    let (order, groups) = descending_groups(scores);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (start, end) in groups {
        for &i in &order[start..end] {
            if labels[i] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// ROC operating points (fpr, tpr) from (0,0) to (1,1) over descending thresholds.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>, MetricsError> {
    let (p, n) = check_binary(scores, labels)?;
    let (order, groups) = descending_groups(scores);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (start, end) in groups {
        for &i in &order[start..end] {
            if labels[i] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    Ok(points)
}

pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub low_percentile: f64,
    pub high_percentile: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            low_percentile: 5.0,
            high_percentile: 95.0,
            seed: 7,
        }
    }
}

/// Generator for resample `index`: one ChaCha stream per resample, so the
/// draws do not depend on evaluation order.
pub fn resample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Statistic values over all resamples, non-finite values dropped.
pub fn bootstrap_distribution<T: Clone, F: Fn(&[T]) -> f64>(
    data: &[T],
    statistic: F,
    resamples: usize,
    seed: u64,
) -> Result<Vec<f64>, MetricsError> {
    if data.is_empty() {
        return Err(MetricsError::EmptyData);
    }
    let mut sample = Vec::with_capacity(data.len());
    let mut values = Vec::with_capacity(resamples);
    for index in 0..resamples {
        let mut rng = resample_rng(seed, index);
        sample.clear();
        sample.extend((0..data.len()).map(|_| data[rng.random_range(0..data.len())].clone()));
        let v = statistic(&sample);
        if v.is_finite() {
            values.push(v);
        }
    }
    Ok(values)
}

/// Linear-interpolated percentile of an ascending-sorted slice.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Percentile bootstrap interval of `statistic` over `data`.
pub fn bootstrap_ci<T: Clone, F: Fn(&[T]) -> f64>(
    data: &[T],
    statistic: F,
    cfg: &BootstrapConfig,
) -> Result<(f64, f64), MetricsError> {
    let mut values = bootstrap_distribution(data, statistic, cfg.resamples, cfg.seed)?;
    if values.is_empty() {
        return Err(MetricsError::DegenerateBootstrap);
    }
    values.sort_by(f64::total_cmp);
    Ok((
        percentile(&values, cfg.low_percentile),
        percentile(&values, cfg.high_percentile),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(mask: &mut BinaryMask, cr: f64, cc: f64, radius: f64) {
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
                if d <= radius {
                    mask.set(r, c, true);
                }
            }
        }
    }

    fn annulus(mask: &mut BinaryMask, cr: f64, cc: f64, inner: f64, outer: f64) {
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
                if d <= outer && d > inner {
                    mask.set(r, c, true);
                }
            }
        }
    }

    #[test]
    fn perfect_segmentation() {
        let gt = LabelMap::new(2, 3, vec![0, 1, 2, 3, 1, 0]).unwrap();
        let s = seg_scores(&gt, &gt).unwrap();
        assert_eq!(s.per_class.len(), 3);
        let w = s.weighted.unwrap();
        assert_eq!((w.f1, w.iou, w.mse), (1.0, 1.0, 0.0));
    }

    #[test]
    fn half_overlap_counts() {
        // 20×20 = 400 px; gt artery rows 0..5 (100 px), pred artery rows 2..7 shifted by 50 px
        let mut gt = LabelMap::filled(20, 20, Class::Background);
        let mut pred = gt.clone();
        for p in 0..100 {
            gt.set(p / 20, p % 20, Class::Artery);
            let q = p + 50;
            pred.set(q / 20, q % 20, Class::Artery);
        }
        let s = seg_scores(&pred, &gt).unwrap();
        let a = s.per_class[0];
        assert_eq!((a.tp, a.fp, a.fn_), (50, 50, 50));
        assert_eq!(a.f1, 0.5);
        assert!((a.iou - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.mse, 100.0 / 400.0);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let gt = LabelMap::new(2, 2, vec![1, 1, 2, 0]).unwrap();
        let pred = LabelMap::filled(2, 2, Class::Background);
        let s = seg_scores(&pred, &gt).unwrap();
        let w = s.weighted.unwrap();
        assert_eq!((w.f1, w.iou), (0.0, 0.0));
        assert!(seg_scores(&pred, &LabelMap::filled(2, 3, Class::Background)).is_err());
    }

    #[test]
    fn weights_follow_gt_share() {
        // artery perfect (3 px), vein missed (1 px) -> weighted f1 = 0.75
        let gt = LabelMap::new(2, 2, vec![1, 1, 1, 2]).unwrap();
        let pred = LabelMap::new(2, 2, vec![1, 1, 1, 0]).unwrap();
        let w = seg_scores(&pred, &gt).unwrap().weighted.unwrap();
        assert_eq!(w.f1, 0.75);
    }

    #[test]
    fn betti_shapes() {
        let mut d = BinaryMask::new(41, 41);
        disk(&mut d, 20.0, 20.0, 12.0);
        assert_eq!(betti_numbers(&d), BettiPair { b0: 1, b1: 0 });
        let mut a = BinaryMask::new(41, 41);
        annulus(&mut a, 20.0, 20.0, 6.0, 12.0);
        assert_eq!(betti_numbers(&a), BettiPair { b0: 1, b1: 1 });
        let mut two = BinaryMask::new(41, 90);
        annulus(&mut two, 20.0, 20.0, 6.0, 12.0);
        annulus(&mut two, 20.0, 65.0, 6.0, 12.0);
        assert_eq!(betti_numbers(&two), BettiPair { b0: 2, b1: 2 });
        assert_eq!(betti_numbers(&BinaryMask::new(5, 5)), BettiPair::default());
    }

    #[test]
    fn hole_touching_border_is_not_a_hole() {
        // U shape open to the top edge
        let m = BinaryMask::from_fn(5, 5, |r, c| c == 0 || c == 4 || r == 4);
        assert_eq!(betti_numbers(&m), BettiPair { b0: 1, b1: 0 });
    }

    #[test]
    fn betti_error_examples() {
        let mut gt = LabelMap::filled(10, 20, Class::Background);
        for c in 2..18 {
            gt.set(5, c, Class::Artery);
        }
        for c in 2..18 {
            gt.set(8, c, Class::Vein);
        }
        assert_eq!(betti_error(&gt, &gt).unwrap(), 0.0);
        let mut split = gt.clone();
        split.set(5, 10, Class::Background);
        assert_eq!(betti_error(&split, &gt).unwrap(), 0.5);

        let mut holes = LabelMap::filled(12, 12, Class::Background);
        let mut gt2 = holes.clone();
        for (off, class) in [(0, Class::Artery), (6, Class::Vein)] {
            for r in 1..5 {
                for c in off + 1..off + 5 {
                    gt2.set(r, c, class);
                    if !(r == 2 && c == off + 2) {
                        holes.set(r, c, class);
                    }
                }
            }
        }
        assert_eq!(betti_error(&holes, &gt2).unwrap(), 1.0);
    }

    #[test]
    fn patched_betti_on_identical_maps_is_zero() {
        let (_, t) = crate::loss::gradcheck::random_pair(20, 20, 4);
        assert_eq!(betti_error_patched(&t, &t, 8).unwrap(), 0.0);
        assert_eq!(betti_error_patched(&t, &t, 0), Err(MetricsError::BadPatch));
    }

    #[test]
    fn icc_perfect_agreement_is_one() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, i as f64)).collect();
        let r = icc(&pairs, 1).unwrap();
        assert!((r.icc - 1.0).abs() < 1e-12);
        assert!((r.ci_low - 1.0).abs() < 1e-12 && (r.ci_high - 1.0).abs() < 1e-12);
    }

    #[test]
    fn icc_anti_agreement_is_negative() {
        // longhand two-way table for (x, 10 - x), x = 1..5:
        // row means all 5 -> MSR = 0; column means 3 and 7; grand 5;
        // SSC = 5·(4 + 4) = 40, MSC = 40; SST = 2·Σ(x-5)² = 60, SSE = 60 - 0 - 40 = 20, MSE = 20/4 = 5
        // ICC = (0 - 5) / (0 + 5 + (2/5)(40 - 5)) = -5 / 19
        let pairs: Vec<(f64, f64)> = (1..=5).map(|x| (x as f64, 10.0 - x as f64)).collect();
        let v = icc_point(&pairs).unwrap();
        assert!((v + 5.0 / 19.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn icc_errors() {
        assert_eq!(
            icc_point(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(MetricsError::TooFewSubjects { needed: 3, got: 2 })
        );
        assert_eq!(icc_point(&[(1.0, 1.0); 4]), Err(MetricsError::ZeroVariance));
        assert_eq!(icc_point(&[(1.0, f64::NAN); 4]), Err(MetricsError::NonFinite));
    }

    #[test]
    fn icc_is_symmetric_in_raters() {
        let pairs: Vec<(f64, f64)> = (0..12).map(|i| (i as f64 * 0.7, (i * i % 7) as f64)).collect();
        let swapped: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        assert!((icc_point(&pairs).unwrap() - icc_point(&swapped).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mann_whitney_examples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!((r.u_a, r.u_b), (0.0, 9.0));
        assert_eq!(r.method, PValueMethod::Exact);
        assert!((r.p_value - 0.1).abs() < 1e-15);
        let same = mann_whitney_u(&[1.0, 2.0, 2.0, 5.0], &[5.0, 2.0, 1.0, 2.0]).unwrap();
        assert!((same.p_value - 1.0).abs() < 1e-9);
        assert_eq!(mann_whitney_u(&[], &[1.0]), Err(MetricsError::EmptySample));
        assert_eq!(
            mann_whitney_u_with(&[1.0], &[1.0], Some(PValueMethod::Exact)),
            Err(MetricsError::TiesInExact)
        );
    }

    #[test]
    fn u_distribution_sums_to_binomial() {
        let d = u_distribution(4, 5);
        assert_eq!(d.len(), 21);
        assert_eq!(d.iter().sum::<u64>(), 126);
        assert!(d.iter().zip(d.iter().rev()).all(|(a, b)| a == b));
    }

    #[test]
    fn auc_examples() {
        let r = roc_pr_auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!((r.roc, r.pr), (1.0, 1.0));
        let r = roc_pr_auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(r.roc, 0.5);
        assert_eq!(r.pr, 0.5);
        assert_eq!(roc_pr_auc(&[0.1, 0.2], &[1, 1]), Err(MetricsError::SingleClass));
        assert_eq!(roc_pr_auc(&[0.1], &[1, 0]), Err(MetricsError::LengthMismatch(1, 2)));
    }

    #[test]
    fn average_precision_hand_case() {
        // descending: 0.9(+) 0.8(-) 0.7(+) 0.6(-): AP = 0.5·1 + 0.5·(2/3)
        let r = roc_pr_auc(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]).unwrap();
        assert!((r.pr - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
        assert_eq!(r.roc, 0.75);
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        let data = vec![3.0; 25];
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let (lo, hi) = bootstrap_ci(&data, mean, &BootstrapConfig::default()).unwrap();
        assert_eq!((lo, hi), (3.0, 3.0));

        let coin: Vec<f64> = (0..400).map(|i| (i % 2) as f64).collect();
        let cfg = BootstrapConfig {
            seed: 99,
            ..BootstrapConfig::default()
        };
        let a = bootstrap_ci(&coin, mean, &cfg).unwrap();
        let b = bootstrap_ci(&coin, mean, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.0 < 0.5 && 0.5 < a.1);
        let empty: Vec<f64> = vec![];
        assert_eq!(bootstrap_ci(&empty, mean, &cfg), Err(MetricsError::EmptyData));
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 50.0), 3.0);
        assert_eq!(percentile(&v, 5.0), 1.2);
        assert_eq!(percentile(&v, 100.0), 5.0);
    }
}
