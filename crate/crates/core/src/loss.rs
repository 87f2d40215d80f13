//! The vascular-feature-optimised loss: cross-entropy plus a λ-weighted
//! multi-scale box-count discrepancy, with exact gradients.
//!
//! Gradients are taken with respect to the probability map itself, each
//! entry treated as an independent variable. Box counts on the prediction
//! are relaxed to the sum over ε-tiles of the per-tile maximum probability,
//! which equals the hard count on binary maps. The maximum routes its
//! gradient to the first maximal pixel of the tile in raster order.

use thiserror::Error;

use crate::features::{box_counts, dyadic_sizes, FeatureError};
use crate::morphology::vessel_mask;
use crate::raster_io::{harden, Class, LabelMap, ProbMap, Shaped, NUM_CLASSES};

/// Lower clamp applied to probabilities inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: prediction {pred:?}, ground truth {gt:?}")]
    ShapeMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("ground truth has no {0} pixels")]
    EmptyGroundTruth(Class),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// How N_S(ε) is obtained from the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountMode {
    /// Per-tile maximum of the probabilities (differentiable almost everywhere).
    #[default]
    Soft,
    /// Hard counts on the argmax label map (zero gradient).
    Hardened,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    /// β of the optional log-sum-exp tile maximum; `None` uses the hard per-tile maximum.
    pub sharpness: Option<f64>,
    /// Classes over which the box-count loss is averaged.
    pub classes: Vec<Class>,
    /// Fail instead of skipping a class with no ground-truth pixels.
    pub strict_empty: bool,
    pub count_mode: CountMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            sharpness: None,
            classes: vec![Class::Artery, Class::Vein],
            strict_empty: false,
            count_mode: CountMode::Soft,
        }
    }
}

impl LossConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(LossError::BadConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if let Some(beta) = self.sharpness {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(LossError::BadConfig(format!("sharpness must be > 0, got {beta}")));
            }
        }
        if self.classes.is_empty() {
            return Err(LossError::BadConfig("class set is empty".into()));
        }
        if self.classes.contains(&Class::Background) {
            return Err(LossError::BadConfig("background cannot be a box-count class".into()));
        }
        Ok(())
    }
}

/// Gradient planes laid out like [`ProbMap::values`].
pub type Gradient = Vec<f64>;

/// (flat index, derivative) pairs.
type SparseGradient = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// Cross-entropy, standing in for the vessel-density term.
    pub loss_v: f64,
    pub loss_b: f64,
    pub gradient: Option<Gradient>,
}

/// Density-difference form of the vessel-density loss and its mean-absolute-error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeForm {
    pub value: f64,
    pub bound: f64,
}

pub fn loss_v_mae_form(s: &[f64], t: &[f64]) -> Result<MaeForm, LossError> {
    if s.len() != t.len() || s.is_empty() {
        return Err(LossError::ShapeMismatch {
            pred: (1, s.len()),
            gt: (1, t.len()),
        });
    }
    let n = s.len() as f64;
    let diff: f64 = s.iter().sum::<f64>() - t.iter().sum::<f64>();
    let bound: f64 = s.iter().zip(t).map(|(a, b)| (a - b).abs()).sum();
    Ok(MaeForm {
        value: diff.abs() / n,
        bound: bound / n,
    })
}

fn check_shapes(s: &ProbMap, t: &LabelMap) -> Result<(), LossError> {
    if !t.same_shape(s) {
        return Err(LossError::ShapeMismatch {
            pred: s.shape(),
            gt: t.shape(),
        });
    }
    Ok(())
}

/// Mean over pixels of `-ln s[true class]`, probabilities clamped to `[PROB_FLOOR, 1]`.
///
/// The gradient is `-1 / (N s_c)` on the true-class channel and zero
/// elsewhere, with no softmax applied; inside the clamp region it is zero.
pub fn cross_entropy(s: &ProbMap, t: &LabelMap) -> Result<(f64, Gradient), LossError> {
    check_shapes(s, t)?;
    let n = s.pixels();
    let inv_n = 1.0 / n as f64;
    let values = s.values();
    let mut grad = vec![0.0; values.len()];
    let mut sum = 0.0;
    for (p, &label) in t.labels().iter().enumerate() {
        let i = label as usize * n + p;
        let v = values[i];
        let clamped = v.clamp(PROB_FLOOR, 1.0);
        sum -= clamped.ln();
        if v > PROB_FLOOR && v < 1.0 {
            grad[i] = -inv_n / v;
        }
    }
    Ok((sum * inv_n, grad))
}

/// Relaxed box count of one probability plane at box size `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCount {
    pub value: f64,
    /// (pixel index, ∂value/∂s[pixel]) for every pixel with a non-zero derivative.
    pub derivatives: Vec<(usize, f64)>,
}

pub fn soft_box_counts(plane: &[f64], height: usize, width: usize, epsilon: usize) -> SoftCount {
    soft_box_counts_with(plane, height, width, epsilon, None)
}

/// As [`soft_box_counts`], optionally replacing the tile maximum by `ln Σ exp(β s) / β`.
pub fn soft_box_counts_with(
    plane: &[f64],
    height: usize,
    width: usize,
    epsilon: usize,
    sharpness: Option<f64>,
) -> SoftCount {
    assert_eq!(plane.len(), height * width);
    assert!(epsilon > 0);
    let tiles_c = width.div_ceil(epsilon);
    let tiles = height.div_ceil(epsilon) * tiles_c;
    let tile_of = |p: usize| (p / width / epsilon) * tiles_c + (p % width) / epsilon;
    let mut best = vec![f64::NEG_INFINITY; tiles];
    let mut arg = vec![usize::MAX; tiles];
    for (p, &v) in plane.iter().enumerate() {
        let k = tile_of(p);
        if v > best[k] {
            best[k] = v;
            arg[k] = p;
        }
    }
    match sharpness {
        None => SoftCount {
            value: best.iter().sum(),
            derivatives: arg.into_iter().map(|p| (p, 1.0)).collect(),
        },
        Some(beta) => {
            let mut z = vec![0.0; tiles];
            for (p, &v) in plane.iter().enumerate() {
                let k = tile_of(p);
                z[k] += (beta * (v - best[k])).exp();
            }
            let value = best.iter().zip(&z).map(|(m, zk)| m + zk.ln() / beta).sum();
            let derivatives = plane
                .iter()
                .enumerate()
                .map(|(p, &v)| {
                    let k = tile_of(p);
                    (p, (beta * (v - best[k])).exp() / z[k])
                })
                .collect();
            SoftCount { value, derivatives }
        }
    }
}

/// `1 / sqrt(Σ ε²)` over the dyadic sizes of a shape.
pub fn scale_normaliser(height: usize, width: usize) -> f64 {
    let sum: f64 = dyadic_sizes(height, width).iter().map(|&e| (e * e) as f64).sum();
    1.0 / sum.sqrt()
}

/// Σ√ε / sqrt(Σ ε²): the box-count loss ceiling when every per-scale relative error is at most 1.
pub fn loss_b_scale_bound(height: usize, width: usize) -> f64 {
    let root_sum: f64 = dyadic_sizes(height, width).iter().map(|&e| (e as f64).sqrt()).sum();
    root_sum * scale_normaliser(height, width)
}

/// Largest possible box-count loss for a shape: N_T = 1 and every tile occupied in the prediction.
pub fn loss_b_ceiling(height: usize, width: usize) -> f64 {
    let total: f64 = dyadic_sizes(height, width)
        .iter()
        .map(|&e| {
            let tiles = (height.div_ceil(e) * width.div_ceil(e)) as f64;
            (e as f64).sqrt() * (tiles - 1.0).max(1.0)
        })
        .sum();
    total * scale_normaliser(height, width)
}

fn loss_b_impl(
    s: &ProbMap,
    t: &LabelMap,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(f64, Option<Gradient>), LossError> {
    check_shapes(s, t)?;
    cfg.validate()?;
    let (h, w) = s.shape();
    let n = s.pixels();
    let sizes = dyadic_sizes(h, w);
    if sizes.is_empty() {
        return Err(FeatureError::TooSmall { height: h, width: w }.into());
    }
    let norm = scale_normaliser(h, w);
    let hardened = match cfg.count_mode {
        CountMode::Hardened => Some(harden(s)),
        CountMode::Soft => None,
    };

    let mut per_class = Vec::with_capacity(cfg.classes.len());
    let mut grad = want_grad.then(|| vec![0.0; s.values().len()]);
    // accumulated first so the class mean can scale them
    let mut contributions: Vec<(Class, f64, SparseGradient)> = Vec::new();
    for &class in &cfg.classes {
        let gt_mask = vessel_mask(t, class);
        if gt_mask.is_empty() {
            if cfg.strict_empty {
                return Err(LossError::EmptyGroundTruth(class));
            }
            continue;
        }
        let gt_counts = box_counts(&gt_mask)?.counts;
        let pred_counts = match &hardened {
            Some(labels) => Some(box_counts(&vessel_mask(labels, class))?.counts),
            None => None,
        };
        let plane = s.plane(class);
        let mut value = 0.0;
        let mut derivs = Vec::new();
        for (i, &eps) in sizes.iter().enumerate() {
            let nt = gt_counts[i] as f64;
            let root_eps = (eps as f64).sqrt();
            let ns = match &pred_counts {
                Some(counts) => counts[i] as f64,
                None => {
                    let soft = soft_box_counts_with(plane, h, w, eps, cfg.sharpness);
                    let sign = sign(soft.value - nt);
                    if want_grad && sign != 0.0 {
                        let scale = root_eps * sign / nt * norm;
                        derivs.extend(soft.derivatives.iter().map(|&(p, d)| (p, d * scale)));
                    }
                    soft.value
                }
            };
            value += root_eps * ((nt - ns) / nt).abs();
        }
        contributions.push((class, value * norm, derivs));
    }

    if contributions.is_empty() {
        return Ok((0.0, grad));
    }
    let inv_classes = 1.0 / contributions.len() as f64;
    for (class, value, derivs) in contributions {
        per_class.push(value);
        if let Some(g) = grad.as_mut() {
            let offset = class.index() * n;
            for (p, d) in derivs {
                g[offset + p] += d * inv_classes;
            }
        }
    }
    let mean = per_class.iter().sum::<f64>() * inv_classes;
    Ok((mean, grad))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Multi-scale box-count loss with its gradient.
pub fn loss_b(s: &ProbMap, t: &LabelMap, cfg: &LossConfig) -> Result<(f64, Gradient), LossError> {
    let (value, grad) = loss_b_impl(s, t, cfg, true)?;
    Ok((value, grad.expect("gradient requested")))
}

pub fn loss_b_value(s: &ProbMap, t: &LabelMap, cfg: &LossConfig) -> Result<f64, LossError> {
    Ok(loss_b_impl(s, t, cfg, false)?.0)
}

/// `cross_entropy + λ · loss_b`, gradients summed.
pub fn vafo_loss(s: &ProbMap, t: &LabelMap, cfg: &LossConfig) -> Result<LossValue, LossError> {
    let (ce, mut grad) = cross_entropy(s, t)?;
    let (lb, lb_grad) = loss_b(s, t, cfg)?;
    if cfg.lambda != 0.0 {
        for (g, d) in grad.iter_mut().zip(&lb_grad) {
            *g += cfg.lambda * d;
        }
    }
    Ok(LossValue {
        total: ce + cfg.lambda * lb,
        loss_v: ce,
        loss_b: lb,
        gradient: Some(grad),
    })
}

/// Loss value without the gradient.
pub fn vafo_loss_value(s: &ProbMap, t: &LabelMap, cfg: &LossConfig) -> Result<LossValue, LossError> {
    let (ce, _) = cross_entropy(s, t)?;
    let lb = loss_b_value(s, t, cfg)?;
    Ok(LossValue {
        total: ce + cfg.lambda * lb,
        loss_v: ce,
        loss_b: lb,
        gradient: None,
    })
}

pub mod gradcheck {
    //! Central finite-difference verification of the analytic gradients.

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Default probe step.
    pub const STEP: f64 = 1e-4;

    /// Floor added to random probabilities before normalising, keeping them away from the log clamp.
    const RANDOM_FLOOR: f64 = 0.2;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct GradCheckReport {
        pub ce: f64,
        pub loss_b: f64,
        pub total: f64,
        pub checked: usize,
        pub excluded: usize,
    }

    impl GradCheckReport {
        pub fn max(&self) -> f64 {
            self.ce.max(self.loss_b).max(self.total)
        }
    }

    /// Random label map and strictly positive probability map of the same shape.
    pub fn random_pair(height: usize, width: usize, seed: u64) -> (ProbMap, LabelMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = (0..height * width)
            .map(|_| rng.random_range(0..NUM_CLASSES as u8))
            .collect();
        let t = LabelMap::new(height, width, labels).expect("valid labels");
        (random_probmap(height, width, &mut rng), t)
    }

    pub fn random_probmap(height: usize, width: usize, rng: &mut impl Rng) -> ProbMap {
        let n = height * width;
        let mut values = vec![0.0; NUM_CLASSES * n];
        for p in 0..n {
            let raw: [f64; NUM_CLASSES] = std::array::from_fn(|_| rng.random::<f64>() + RANDOM_FLOOR);
            let sum: f64 = raw.iter().sum();
            for c in 0..NUM_CLASSES {
                values[c * n + p] = raw[c] / sum;
            }
        }
        ProbMap::new(height, width, values).expect("normalised by construction")
    }

    /// Flat entries whose finite differences would straddle a kink of the loss.
    ///
    /// An entry is excluded when its tile (at any box size) has a top-two
    /// probability gap below `2·step`, when the soft count of its class sits
    /// within `2·step` of the ground-truth count, or when a true-class
    /// probability lies within `step` of the log clamp.
    pub fn excluded_entries(s: &ProbMap, t: &LabelMap, cfg: &LossConfig, step: f64) -> Vec<bool> {
        let (h, w) = s.shape();
        let n = s.pixels();
        let mut out = vec![false; s.values().len()];
        for (p, &label) in t.labels().iter().enumerate() {
            let v = s.values()[label as usize * n + p];
            if v <= PROB_FLOOR + step || v >= 1.0 - step {
                out[label as usize * n + p] = true;
            }
        }
        if cfg.lambda == 0.0 || cfg.count_mode == CountMode::Hardened {
            return out;
        }
        for &class in &cfg.classes {
            let gt = vessel_mask(t, class);
            if gt.is_empty() {
                continue;
            }
            let gt_counts = box_counts(&gt).map(|c| c.counts).unwrap_or_default();
            let plane = s.plane(class);
            let offset = class.index() * n;
            for (i, eps) in dyadic_sizes(h, w).into_iter().enumerate() {
                let soft = soft_box_counts_with(plane, h, w, eps, cfg.sharpness);
                if (soft.value - gt_counts[i] as f64).abs() < 2.0 * step {
                    out[offset..offset + n].iter_mut().for_each(|x| *x = true);
                    continue;
                }
                if cfg.sharpness.is_some() {
                    continue;
                }
                let tiles_c = w.div_ceil(eps);
                let tiles = h.div_ceil(eps) * tiles_c;
                let mut top = vec![(f64::NEG_INFINITY, f64::NEG_INFINITY); tiles];
                let tile_of = |p: usize| (p / w / eps) * tiles_c + (p % w) / eps;
                for (p, &v) in plane.iter().enumerate() {
                    let k = tile_of(p);
                    if v > top[k].0 {
                        top[k] = (v, top[k].0);
                    } else if v > top[k].1 {
                        top[k].1 = v;
                    }
                }
                for p in 0..n {
                    let (a, b) = top[tile_of(p)];
                    if a - b < 2.0 * step {
                        out[offset + p] = true;
                    }
                }
            }
        }
        out
    }

    fn relative_error(analytic: f64, numeric: f64) -> f64 {
        let scale = analytic.abs().max(numeric.abs()).max(1e-12);
        (analytic - numeric).abs() / scale
    }

    /// Max relative error of the cross-entropy, box-count, and total gradients.
    pub fn check(s: &ProbMap, t: &LabelMap, cfg: &LossConfig, step: f64) -> Result<GradCheckReport, LossError> {
        let analytic = vafo_loss(s, t, cfg)?;
        let (_, ce_grad) = cross_entropy(s, t)?;
        let (_, lb_grad) = loss_b(s, t, cfg)?;
        let total_grad = analytic.gradient.expect("gradient requested");
        let excluded = excluded_entries(s, t, cfg, step);
        let mut report = GradCheckReport {
            ce: 0.0,
            loss_b: 0.0,
            total: 0.0,
            checked: 0,
            excluded: 0,
        };
        for i in 0..s.values().len() {
            if excluded[i] {
                report.excluded += 1;
                continue;
            }
            let plus = s.probe(i, step);
            let minus = s.probe(i, -step);
            let vp = vafo_loss_value(&plus, t, cfg)?;
            let vm = vafo_loss_value(&minus, t, cfg)?;
            let d_ce = (vp.loss_v - vm.loss_v) / (2.0 * step);
            let d_lb = (vp.loss_b - vm.loss_b) / (2.0 * step);
            let d_total = (vp.total - vm.total) / (2.0 * step);
            report.ce = report.ce.max(relative_error(ce_grad[i], d_ce));
            report.loss_b = report.loss_b.max(relative_error(lb_grad[i], d_lb));
            report.total = report.total.max(relative_error(total_grad[i], d_total));
            report.checked += 1;
        }
        Ok(report)
    }
}
