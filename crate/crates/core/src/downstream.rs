//! Single-feature logistic regression on binary-outcome cohorts.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{bootstrap_ci, roc_pr_auc, AucPair, BootstrapConfig, MetricsError};

/// Gradient ∞-norm at which Newton iterations stop.
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
/// Cap on |weight| when the classes are perfectly separable.
pub const SEPARABLE_WEIGHT_CAP: f64 = 50.0;

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error("cohort size must be even and positive, got {0}")]
    BadSize(usize),
    #[error("effect size must be finite and >= 0, got {0}")]
    BadEffect(f64),
    #[error("cohort needs both labels")]
    SingleLabel,
    #[error("invalid cohort row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("train fraction must be in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("split leaves a class without {0} samples")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub subject_id: String,
    pub feature: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    rows: Vec<Subject>,
}

impl Cohort {
    pub fn new(rows: Vec<Subject>) -> Result<Self, DownstreamError> {
        for (i, s) in rows.iter().enumerate() {
            if !s.feature.is_finite() {
                return Err(DownstreamError::BadRow {
                    row: i,
                    reason: "non-finite feature".into(),
                });
            }
            if s.label > 1 {
                return Err(DownstreamError::BadRow {
                    row: i,
                    reason: format!("label {} is not 0 or 1", s.label),
                });
            }
        }
        if !(rows.iter().any(|s| s.label == 0) && rows.iter().any(|s| s.label == 1)) {
            return Err(DownstreamError::SingleLabel);
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Subject] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn features(&self) -> Vec<f64> {
        self.rows.iter().map(|s| s.feature).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.rows.iter().map(|s| s.label).collect()
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, DownstreamError> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        let rows = reader.deserialize().collect::<Result<Vec<Subject>, _>>()?;
        Self::new(rows)
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<(), DownstreamError> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Balanced two-Gaussian cohort: controls ~ N(0, 1), cases ~ N(d, 1).
pub fn synth_cohort(n: usize, effect_size: f64, seed: u64) -> Result<Cohort, DownstreamError> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(DownstreamError::BadSize(n));
    }
    if !(effect_size.is_finite() && effect_size >= 0.0) {
        return Err(DownstreamError::BadEffect(effect_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let label = (i >= n / 2) as u8;
            let z: f64 = StandardNormal.sample(&mut rng);
            Subject {
                subject_id: format!("s{i:05}"),
                feature: z + effect_size * label as f64,
                label,
            }
        })
        .collect();
    Cohort::new(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogitModel {
    pub weight: f64,
    pub intercept: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Perfect separation detected; the weight was capped.
    pub separable: bool,
    /// Log-likelihood after each accepted step, starting from the initial point.
    pub log_likelihood_trace: Vec<f64>,
}

impl LogitModel {
    pub fn score(&self, x: f64) -> f64 {
        self.weight * x + self.intercept
    }

    pub fn probability(&self, x: f64) -> f64 {
        sigmoid(self.score(x))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn log_likelihood(xs: &[f64], ys: &[u8], weight: f64, intercept: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let z = weight * x + intercept;
            y as f64 * z - softplus(z)
        })
        .sum()
}

fn is_separable(xs: &[f64], ys: &[u8]) -> bool {
    let range = |label: u8| {
        xs.iter()
            .zip(ys)
            .filter(|(_, &y)| y == label)
            .fold((f64::MAX, f64::MIN), |(lo, hi), (&x, _)| (lo.min(x), hi.max(x)))
    };
    let (lo0, hi0) = range(0);
    let (lo1, hi1) = range(1);
    hi0 < lo1 || hi1 < lo0
}

/// Maximum-likelihood fit of σ(w·x + b) by Newton iterations with step halving.
pub fn fit_logistic(train: &Cohort) -> LogitModel {
    let xs = train.features();
    let ys = train.labels();
    fit_logistic_xy(&xs, &ys)
}

pub fn fit_logistic_xy(xs: &[f64], ys: &[u8]) -> LogitModel {
    let separable = is_separable(xs, ys);
    let mean_y = ys.iter().map(|&y| y as f64).sum::<f64>() / ys.len() as f64;
    let (mut w, mut b) = (0.0, (mean_y / (1.0 - mean_y)).ln());
    let mut ll = log_likelihood(xs, ys, w, b);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        // gradient and Hessian of the log-likelihood
        let (mut gw, mut gb, mut hww, mut hwb, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            let p = sigmoid(w * x + b);
            let r = y as f64 - p;
            let v = p * (1.0 - p);
            gw += r * x;
            gb += r;
            hww += v * x * x;
            hwb += v * x;
            hbb += v;
        }
        if gw.abs().max(gb.abs()) < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        if separable && w.abs() >= SEPARABLE_WEIGHT_CAP {
            break;
        }
        iterations += 1;
        let det = hww * hbb - hwb * hwb;
        let (mut dw, mut db) = if det > 1e-300 {
            ((hbb * gw - hwb * gb) / det, (hww * gb - hwb * gw) / det)
        } else {
            (gw, gb)
        };
        let mut accepted = false;
        for _ in 0..60 {
            let (mut nw, mut nb) = (w + dw, b + db);
            if separable && nw.abs() > SEPARABLE_WEIGHT_CAP {
                let scale = SEPARABLE_WEIGHT_CAP / nw.abs();
                nw *= scale;
                nb = b + db * (nw - w) / dw;
            }
            let next = log_likelihood(xs, ys, nw, nb);
            if next >= ll {
                w = nw;
                b = nb;
                ll = next;
                accepted = true;
                break;
            }
            dw *= 0.5;
            db *= 0.5;
        }
        if !accepted {
            // no ascent direction at floating-point resolution
            converged = true;
            break;
        }
        trace.push(ll);
    }
    LogitModel {
        weight: w,
        intercept: b,
        converged,
        iterations,
        separable,
        log_likelihood_trace: trace,
    }
}

/// Stratified shuffle split; returns (train, test) row indices.
pub fn stratified_split(
    cohort: &Cohort,
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DownstreamError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DownstreamError::BadFraction(train_frac));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = (0..cohort.len()).filter(|&i| cohort.rows[i].label == label).collect();
        idx.shuffle(&mut rng);
        let k = (train_frac * idx.len() as f64).round() as usize;
        if k == 0 {
            return Err(DownstreamError::EmptySplit("training"));
        }
        if k == idx.len() {
            return Err(DownstreamError::EmptySplit("test"));
        }
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitReport {
    pub model: LogitModel,
    pub auc: AucPair,
    /// AUC-ROC of the raw test feature, oriented by the sign of the fitted weight.
    pub raw_feature_auc_roc: f64,
    pub roc_ci: (f64, f64),
    pub pr_ci: (f64, f64),
    pub n_train: usize,
    pub n_test: usize,
}

pub fn evaluate_split(
    cohort: &Cohort,
    train_frac: f64,
    bootstrap: &BootstrapConfig,
    seed: u64,
) -> Result<SplitReport, DownstreamError> {
    let (train_idx, test_idx) = stratified_split(cohort, train_frac, seed)?;
    let pick = |idx: &[usize]| -> (Vec<f64>, Vec<u8>) {
        idx.iter()
            .map(|&i| (cohort.rows[i].feature, cohort.rows[i].label))
            .unzip()
    };
    let (train_x, train_y) = pick(&train_idx);
    let (test_x, test_y) = pick(&test_idx);
    let model = fit_logistic_xy(&train_x, &train_y);
    let scores: Vec<f64> = test_x.iter().map(|&x| model.score(x)).collect();
    let auc = roc_pr_auc(&scores, &test_y)?;
    let oriented: Vec<f64> = if model.weight >= 0.0 {
        test_x.clone()
    } else {
        test_x.iter().map(|x| -x).collect()
    };
    let raw_feature_auc_roc = roc_pr_auc(&oriented, &test_y)?.roc;
    debug_assert!(
        model.weight == 0.0 || (auc.roc - raw_feature_auc_roc).abs() < 1e-12,
        "model AUC {} differs from raw-feature AUC {raw_feature_auc_roc}",
        auc.roc
    );

    let pairs: Vec<(f64, u8)> = scores.iter().copied().zip(test_y.iter().copied()).collect();
    let stat = |pick_pr: bool| {
        move |sample: &[(f64, u8)]| {
            let (s, l): (Vec<f64>, Vec<u8>) = sample.iter().copied().unzip();
            match roc_pr_auc(&s, &l) {
                Ok(a) if pick_pr => a.pr,
                Ok(a) => a.roc,
                Err(_) => f64::NAN,
            }
        }
    };
    let roc_ci = bootstrap_ci(&pairs, stat(false), bootstrap)?;
    let pr_ci = bootstrap_ci(&pairs, stat(true), bootstrap)?;
    Ok(SplitReport {
        model,
        auc,
        raw_feature_auc_roc,
        roc_ci,
        pr_ci,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
    })
}

/// Population AUC of two unit-variance Gaussians whose means differ by `d`: Φ(d/√2).
pub fn binormal_auc(d: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-d / 2.0)
}
