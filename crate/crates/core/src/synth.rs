//! Synthetic intra-segment misclassification scenarios.
//!
//! An artery A is drawn as two circular arcs A1 and A2 with equal chords,
//! joined end to end along a common chord line, with a short vein crossing
//! at the joint. The corrupted map flips A2 to vein. Relative feature
//! errors between the two maps can then be compared with their closed
//! forms in the arc ratio ρ = arc(A2) / arc(A1).

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{box_counts, feature_record, vessel_density, FeatureError};
use crate::morphology::{vessel_mask, BinaryMask};
use crate::raster_io::{Class, LabelMap};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    BadSpec(String),
    #[error("arc ratio {rho} cannot be drawn with chord {chord} on a {canvas}px canvas")]
    UnreachableRho { rho: f64, chord: f64, canvas: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("tortuosity undefined on the {0} map")]
    NoTortuosity(&'static str),
}

/// Direction of the common chord line, in radians from the column axis.
///
/// At this angle the 8-connected chain-code length of a straight run
/// carries the same bias as the average over a circular arc, so straight
/// and curved segments are measured consistently.
pub const CHORD_ANGLE: f64 = 35.5 * PI / 180.0;

const SAMPLE_SPACING: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// arc(A2) / arc(A1).
    pub rho: f64,
    /// Vessel width in pixels.
    pub width: f64,
    /// Chord r of each sub-segment in pixels.
    pub chord: f64,
    /// Subtended angle (radians) of the shorter sub-segment; 0 draws it straight.
    pub curvature: f64,
    pub canvas: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            rho: 1.0,
            width: 3.0,
            chord: 160.0,
            curvature: 0.0,
            canvas: 512,
            seed: 7,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(SynthError::BadSpec(format!("rho must be > 0, got {}", self.rho)));
        }
        if self.width.is_nan() || self.width < 1.0 {
            return Err(SynthError::BadSpec(format!("width must be >= 1, got {}", self.width)));
        }
        if self.chord.is_nan() || self.chord < 16.0 {
            return Err(SynthError::BadSpec(format!("chord must be >= 16, got {}", self.chord)));
        }
        if !(0.0..TAU).contains(&self.curvature) {
            return Err(SynthError::BadSpec(format!(
                "curvature must be in [0, 2π), got {}",
                self.curvature
            )));
        }
        if self.canvas < 16 {
            return Err(SynthError::BadSpec(format!(
                "canvas must be >= 16, got {}",
                self.canvas
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPair {
    pub truth: LabelMap,
    pub corrupted: LabelMap,
    /// Pixels of A1 and of A2 (A2 excludes anything already drawn by A1).
    pub a1: BinaryMask,
    pub a2: BinaryMask,
    /// Analytic centreline arc lengths of A1 and A2.
    pub arc_lengths: (f64, f64),
}

impl ScenarioPair {
    pub fn rho(&self) -> f64 {
        self.arc_lengths.1 / self.arc_lengths.0
    }
}

/// arc / chord of a circular arc subtending `theta`.
pub fn arc_chord_ratio(theta: f64) -> f64 {
    if theta < 1e-12 {
        1.0
    } else {
        theta / (2.0 * (theta / 2.0).sin())
    }
}

/// Inverse of [`arc_chord_ratio`] on [0, 2π).
pub fn angle_for_ratio(ratio: f64) -> Option<f64> {
    if ratio.is_nan() || ratio < 1.0 || !ratio.is_finite() {
        return None;
    }
    if ratio == 1.0 {
        return Some(0.0);
    }
    let (mut lo, mut hi) = (0.0, TAU);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if arc_chord_ratio(mid) < ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Points along a circular arc of chord `chord` subtending `theta`, in the
/// chord frame: from (0,0) to (chord,0), bulging toward +y.
fn arc_samples(chord: f64, theta: f64) -> Vec<(f64, f64)> {
    let arc = chord * arc_chord_ratio(theta);
    let steps = (arc / SAMPLE_SPACING).ceil().max(1.0) as usize;
    if theta < 1e-12 {
        return (0..=steps).map(|i| (chord * i as f64 / steps as f64, 0.0)).collect();
    }
    let radius = chord / (2.0 * (theta / 2.0).sin());
    let centre = (chord / 2.0, -radius * (theta / 2.0).cos());
    (0..=steps)
        .map(|i| {
            let psi = -theta / 2.0 + theta * i as f64 / steps as f64;
            (centre.0 + radius * psi.sin(), centre.1 + radius * psi.cos())
        })
        .collect()
}

fn stamp(mask: &mut BinaryMask, points: &[(f64, f64)], width: f64) {
    let reach = width / 2.0;
    let span = reach.ceil() as isize + 1;
    let (h, w) = (mask.height() as isize, mask.width() as isize);
    for &(x, y) in points {
        let (cx, cy) = (x.round() as isize, y.round() as isize);
        for dy in -span..=span {
            for dx in -span..=span {
                let (px, py) = (cx + dx, cy + dy);
                if px < 0 || py < 0 || px >= w || py >= h {
                    continue;
                }
                let d = ((px as f64 - x).powi(2) + (py as f64 - y).powi(2)).sqrt();
                if d <= reach || (dx == 0 && dy == 0) {
                    mask.set(py as usize, px as usize, true);
                }
            }
        }
    }
}

pub fn generate_scenario(spec: &ScenarioSpec) -> Result<ScenarioPair, SynthError> {
    spec.validate()?;
    let r = spec.chord;
    let base_ratio = arc_chord_ratio(spec.curvature);
    let (ratio_1, ratio_2) = if spec.rho >= 1.0 {
        (base_ratio, base_ratio * spec.rho)
    } else {
        (base_ratio / spec.rho, base_ratio)
    };
    let unreachable = || SynthError::UnreachableRho {
        rho: spec.rho,
        chord: spec.chord,
        canvas: spec.canvas,
    };
    let theta_1 = angle_for_ratio(ratio_1).ok_or_else(unreachable)?;
    let theta_2 = angle_for_ratio(ratio_2).ok_or_else(unreachable)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let jitter = (rng.random::<f64>(), rng.random::<f64>());

    // chord frame: A1 on [0, r], A2 on [r, 2r], vein through the joint along the normal
    let a1_local = arc_samples(r, theta_1);
    let a2_local: Vec<(f64, f64)> = arc_samples(r, theta_2).into_iter().map(|(x, y)| (x + r, y)).collect();
    let vein_half = (r / 4.0).min(40.0);
    let vein_steps = (2.0 * vein_half / SAMPLE_SPACING).ceil() as usize;
    let vein_local: Vec<(f64, f64)> = (0..=vein_steps)
        .map(|i| (r, -vein_half + 2.0 * vein_half * i as f64 / vein_steps as f64))
        .collect();

    let (u, n) = (
        (CHORD_ANGLE.cos(), CHORD_ANGLE.sin()),
        (-CHORD_ANGLE.sin(), CHORD_ANGLE.cos()),
    );
    let to_world = |(x, y): (f64, f64)| (x * u.0 + side * y * n.0, x * u.1 + side * y * n.1);
    let mut a1_pts: Vec<(f64, f64)> = a1_local.into_iter().map(to_world).collect();
    let mut a2_pts: Vec<(f64, f64)> = a2_local.into_iter().map(to_world).collect();
    let mut vein_pts: Vec<(f64, f64)> = vein_local.into_iter().map(to_world).collect();

    let all = a1_pts.iter().chain(&a2_pts).chain(&vein_pts);
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let margin = spec.width / 2.0 + 2.0;
    let canvas = spec.canvas as f64;
    if max_x - min_x + 2.0 * margin + 1.0 > canvas || max_y - min_y + 2.0 * margin + 1.0 > canvas {
        return Err(unreachable());
    }
    let shift = (
        (canvas - (max_x - min_x)) / 2.0 - min_x + jitter.0 - 0.5,
        (canvas - (max_y - min_y)) / 2.0 - min_y + jitter.1 - 0.5,
    );
    for p in a1_pts.iter_mut().chain(a2_pts.iter_mut()).chain(vein_pts.iter_mut()) {
        p.0 += shift.0;
        p.1 += shift.1;
    }

    let size = spec.canvas;
    let mut a1 = BinaryMask::new(size, size);
    stamp(&mut a1, &a1_pts, spec.width);
    let mut a2_full = BinaryMask::new(size, size);
    stamp(&mut a2_full, &a2_pts, spec.width);
    let mut vein = BinaryMask::new(size, size);
    stamp(&mut vein, &vein_pts, spec.width);
    let a2 = BinaryMask::from_fn(size, size, |row, col| a2_full.get(row, col) && !a1.get(row, col));

    let mut truth = LabelMap::filled(size, size, Class::Background);
    for (row, col) in vein.pixels() {
        truth.set(row, col, Class::Vein);
    }
    for (row, col) in a1.pixels().chain(a2.pixels()) {
        truth.set(row, col, Class::Artery);
    }
    let mut corrupted = truth.clone();
    for (row, col) in a2.pixels() {
        corrupted.set(row, col, Class::Vein);
    }
    Ok(ScenarioPair {
        truth,
        corrupted,
        a1,
        a2,
        arc_lengths: (r * ratio_1, r * ratio_2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorTriple {
    pub tortuosity: f64,
    pub density: f64,
    pub box_count: f64,
}

/// Closed-form relative errors of tortuosity, vessel density, and small-box counts.
pub fn predicted_errors(rho: f64) -> ErrorTriple {
    let density = rho / (rho + 1.0);
    ErrorTriple {
        tortuosity: (1.0 - rho).abs() / (rho + 1.0),
        density,
        box_count: density,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalErrors {
    pub errors: ErrorTriple,
    /// (ε, relative box-count error) for the two smallest box sizes.
    pub box_count_by_scale: Vec<(usize, f64)>,
}

/// Number of smallest box sizes averaged into the empirical box-count error.
pub const SMALL_SCALES: usize = 2;

/// Relative artery feature errors of the corrupted map against the truth map.
pub fn empirical_errors(pair: &ScenarioPair) -> Result<EmpiricalErrors, SynthError> {
    let truth = vessel_mask(&pair.truth, Class::Artery);
    let corrupted = vessel_mask(&pair.corrupted, Class::Artery);

    let t_truth = feature_record(&pair.truth, Class::Artery)?
        .mean_tortuosity
        .ok_or(SynthError::NoTortuosity("truth"))?;
    let t_corrupted = feature_record(&pair.corrupted, Class::Artery)?
        .mean_tortuosity
        .ok_or(SynthError::NoTortuosity("corrupted"))?;
    let tortuosity = (t_truth - t_corrupted).abs() / t_truth;

    let v_truth = vessel_density(&truth);
    let density = (v_truth - vessel_density(&corrupted)).abs() / v_truth;

    let n_truth = box_counts(&truth)?;
    let n_corrupted = box_counts(&corrupted)?;
    let box_count_by_scale: Vec<(usize, f64)> = n_truth
        .sizes
        .iter()
        .zip(n_truth.counts.iter().zip(&n_corrupted.counts))
        .take(SMALL_SCALES)
        .map(|(&e, (&a, &b))| (e, (a as f64 - b as f64) / a as f64))
        .collect();
    let box_count = box_count_by_scale.iter().map(|x| x.1).sum::<f64>() / box_count_by_scale.len() as f64;
    Ok(EmpiricalErrors {
        errors: ErrorTriple {
            tortuosity,
            density,
            box_count,
        },
        box_count_by_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tortuosity;
    use crate::morphology::{decompose_branches, skeletonize};

    #[test]
    fn predicted_examples() {
        let e = predicted_errors(1.0);
        assert_eq!((e.tortuosity, e.density, e.box_count), (0.0, 0.5, 0.5));
        let e = predicted_errors(0.5);
        assert!((e.tortuosity - 1.0 / 3.0).abs() < 1e-15);
        assert!((e.density - 1.0 / 3.0).abs() < 1e-15);
        let e = predicted_errors(3.0);
        assert_eq!((e.tortuosity, e.density, e.box_count), (0.5, 0.75, 0.75));
    }

    #[test]
    fn ratio_inverse_round_trips() {
        for ratio in [1.0, 1.01, 1.5, 2.0, 5.0, 40.0] {
            let theta = angle_for_ratio(ratio).unwrap();
            assert!((arc_chord_ratio(theta) - ratio).abs() < 1e-9 * ratio);
        }
        assert!(angle_for_ratio(0.9).is_none());
    }

    #[test]
    fn arc_samples_have_expected_length() {
        for theta in [0.0, 1.0, PI, 4.0] {
            let pts = arc_samples(100.0, theta);
            let len: f64 = pts.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
            assert!(
                (len - 100.0 * arc_chord_ratio(theta)).abs() < 1e-3,
                "theta {theta}: {len}"
            );
            let last = pts.last().unwrap();
            assert!((last.0 - 100.0).abs() < 1e-9 && last.1.abs() < 1e-9);
        }
    }

    #[test]
    fn identity_pair_has_zero_error() {
        let mut pair = generate_scenario(&ScenarioSpec::default()).unwrap();
        pair.corrupted = pair.truth.clone();
        let e = empirical_errors(&pair).unwrap().errors;
        assert_eq!((e.tortuosity, e.density, e.box_count), (0.0, 0.0, 0.0));
    }

    #[test]
    fn corrupted_differs_exactly_on_a2() {
        let pair = generate_scenario(&ScenarioSpec {
            rho: 2.0,
            ..ScenarioSpec::default()
        })
        .unwrap();
        let w = pair.truth.width();
        for (i, (&a, &b)) in pair.truth.labels().iter().zip(pair.corrupted.labels()).enumerate() {
            let in_a2 = pair.a2.get(i / w, i % w);
            assert_eq!(a != b, in_a2);
            if in_a2 {
                assert_eq!((a, b), (Class::Artery.id(), Class::Vein.id()));
            }
        }
    }

    fn chain_code_arc(mask: &BinaryMask) -> f64 {
        let graph = decompose_branches(&skeletonize(mask));
        graph.segments.iter().map(|b| b.arc_length).fold(0.0, f64::max)
    }

    #[test]
    fn straight_scenario_has_unit_ratio() {
        let pair = generate_scenario(&ScenarioSpec::default()).unwrap();
        assert_eq!(pair.rho(), 1.0);
        // each piece is thinned on its own and loses a few pixels at its ends
        let measured = chain_code_arc(&pair.a2) / chain_code_arc(&pair.a1);
        assert!((measured - 1.0).abs() < 0.03, "{measured}");
    }

    #[test]
    fn doubled_arc_measures_twice_the_length() {
        let pair = generate_scenario(&ScenarioSpec {
            rho: 2.0,
            ..ScenarioSpec::default()
        })
        .unwrap();
        assert!((pair.rho() - 2.0).abs() < 1e-9);
        let measured = chain_code_arc(&pair.a2) / chain_code_arc(&pair.a1);
        assert!((measured - 2.0).abs() < 0.04, "{measured}");
    }

    #[test]
    fn huge_ratio_on_short_chord_is_unreachable() {
        let spec = ScenarioSpec {
            rho: 100.0,
            chord: 16.0,
            ..ScenarioSpec::default()
        };
        assert!(matches!(
            generate_scenario(&spec),
            Err(SynthError::UnreachableRho { .. })
        ));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            ScenarioSpec {
                rho: 0.0,
                ..ScenarioSpec::default()
            },
            ScenarioSpec {
                width: 0.5,
                ..ScenarioSpec::default()
            },
            ScenarioSpec {
                chord: 8.0,
                ..ScenarioSpec::default()
            },
        ] {
            assert!(matches!(generate_scenario(&spec), Err(SynthError::BadSpec(_))));
        }
    }

    #[test]
    fn truth_artery_is_a_single_branch() {
        for rho in [0.5, 1.0, 2.0] {
            let pair = generate_scenario(&ScenarioSpec {
                rho,
                ..ScenarioSpec::default()
            })
            .unwrap();
            let sk = skeletonize(&vessel_mask(&pair.truth, Class::Artery));
            let g = decompose_branches(&sk);
            let long: Vec<_> = g.segments.iter().filter(|b| tortuosity(b).is_ok()).collect();
            assert_eq!(long.len(), 1, "rho {rho}: {} branches", g.segments.len());
        }
    }
}
