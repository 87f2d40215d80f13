//! Vessel density, box-counting fractal dimension, and distance-factor tortuosity.

use thiserror::Error;

use crate::morphology::{decompose_branches, skeletonize, vessel_mask, BinaryMask, Branch};
use crate::raster_io::{Class, LabelMap};

/// Branches whose chord is shorter than this are not given a tortuosity.
pub const MIN_TORTUOSITY_CHORD: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("box counting needs both sides >= 2, got {height}x{width}")]
    TooSmall { height: usize, width: usize },
    #[error("undefined: {0}")]
    Undefined(&'static str),
    #[error("degenerate branch (chord {chord:.3} px, {pixels} pixels)")]
    Degenerate { chord: f64, pixels: usize },
}

/// Dyadic box sizes `2^i` with `2 <= 2^i <= min(height, width)`.
pub fn dyadic_sizes(height: usize, width: usize) -> Vec<usize> {
    let limit = height.min(width);
    std::iter::successors(Some(2usize), |&e| e.checked_mul(2))
        .take_while(|&e| e <= limit)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxCountCurve {
    pub sizes: Vec<usize>,
    pub counts: Vec<usize>,
}

pub fn vessel_density(mask: &BinaryMask) -> f64 {
    mask.count() as f64 / (mask.height() * mask.width()) as f64
}

/// Occupied-tile counts on origin-anchored ε×ε tilings, ragged edge tiles included.
pub fn box_counts(mask: &BinaryMask) -> Result<BoxCountCurve, FeatureError> {
    let (h, w) = (mask.height(), mask.width());
    if h.min(w) < 2 {
        return Err(FeatureError::TooSmall { height: h, width: w });
    }
    let sizes = dyadic_sizes(h, w);
    let mut counts = Vec::with_capacity(sizes.len());
    // Dyadic tiles nest, so each level is the 2×2 OR-pool of the previous one.
    let mut level = mask.bits().to_vec();
    let (mut lh, mut lw) = (h, w);
    for _ in &sizes {
        let (nh, nw) = (lh.div_ceil(2), lw.div_ceil(2));
        let mut next = vec![false; nh * nw];
        for r in 0..lh {
            for c in 0..lw {
                if level[r * lw + c] {
                    next[(r / 2) * nw + c / 2] = true;
                }
            }
        }
        counts.push(next.iter().filter(|&&b| b).count());
        level = next;
        lh = nh;
        lw = nw;
    }
    Ok(BoxCountCurve { sizes, counts })
}

/// Least-squares slope of ln N(ε) against ln(1/ε) over the positive counts.
pub fn fractal_dimension(curve: &BoxCountCurve) -> Result<f64, FeatureError> {
    let points: Vec<(f64, f64)> = curve
        .sizes
        .iter()
        .zip(&curve.counts)
        .filter(|(_, &n)| n > 0)
        .map(|(&e, &n)| (-(e as f64).ln(), (n as f64).ln()))
        .collect();
    if points.is_empty() {
        return Err(FeatureError::Undefined("no foreground pixels"));
    }
    if points.len() < 2 {
        return Err(FeatureError::Undefined("fewer than two box sizes with positive counts"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

pub fn tortuosity(branch: &Branch) -> Result<f64, FeatureError> {
    if branch.degenerate || branch.chord_length < MIN_TORTUOSITY_CHORD {
        return Err(FeatureError::Degenerate {
            chord: branch.chord_length,
            pixels: branch.pixels.len(),
        });
    }
    Ok(branch.arc_length / branch.chord_length)
}

/// Features of one vessel class in one map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub class: Class,
    pub vessel_density: f64,
    pub fractal_dimension: f64,
    /// Unweighted mean over non-degenerate branches; `None` when no branch qualifies.
    pub mean_tortuosity: Option<f64>,
    pub n_branches: usize,
}

pub fn feature_record(map: &LabelMap, class: Class) -> Result<FeatureRecord, FeatureError> {
    if class == Class::Background {
        return Err(FeatureError::Undefined("background is not a vessel class"));
    }
    let mask = vessel_mask(map, class);
    if mask.is_empty() {
        return Err(FeatureError::Undefined("class absent from map"));
    }
    let fractal_dimension = fractal_dimension(&box_counts(&mask)?)?;
    let graph = decompose_branches(&skeletonize(&mask));
    let values: Vec<f64> = graph.segments.iter().filter_map(|b| tortuosity(b).ok()).collect();
    let mean_tortuosity = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    Ok(FeatureRecord {
        class,
        vessel_density: vessel_density(&mask),
        fractal_dimension,
        mean_tortuosity,
        n_branches: graph.segments.len(),
    })
}
