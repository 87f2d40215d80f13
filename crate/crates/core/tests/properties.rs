use proptest::prelude::*;

use vafo::features::{box_counts, fractal_dimension, vessel_density};
use vafo::loss::{gradcheck, loss_b_ceiling, loss_b_value, LossConfig};
use vafo::metrics::{auc_roc, betti_numbers, icc_point, mann_whitney_u, roc_curve, seg_scores, trapezoid};
use vafo::morphology::{connected_components, decompose_branches, skeletonize, BinaryMask, Connectivity};
use vafo::raster_io::{harden, one_hot, read_vafp, write_vafp, LabelMap, ProbMap, VafpPlanes, NUM_CLASSES};

fn label_map(max_side: usize) -> impl Strategy<Value = LabelMap> {
    (2..=max_side, 2..=max_side).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u8..4, h * w).prop_map(move |labels| LabelMap::new(h, w, labels).unwrap())
    })
}

fn mask(max_side: usize, fill: f64) -> impl Strategy<Value = BinaryMask> {
    (2..=max_side, 2..=max_side).prop_flat_map(move |(h, w)| {
        prop::collection::vec(prop::bool::weighted(fill), h * w)
            .prop_map(move |bits| BinaryMask::from_fn(h, w, |r, c| bits[r * w + c]))
    })
}

/// Thick straight segments, one per horizontal band, so the tubes never touch.
fn tubes() -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(
        (2.0..58.0f64, 0.0..1.0f64, 2.0..58.0f64, 0.0..1.0f64, 1.0..3.5f64),
        1..=3,
    )
    .prop_map(|segments| {
        let band = 20.0;
        let mut m = BinaryMask::new(20 * segments.len(), 60);
        for (i, &(x0, fy0, x1, fy1, width)) in segments.iter().enumerate() {
            let top = i as f64 * band + 4.0;
            let (y0, y1) = (top + fy0 * (band - 8.0), top + fy1 * (band - 8.0));
            for r in 0..m.height() {
                for c in 0..m.width() {
                    let (px, py) = (c as f64, r as f64);
                    let (dx, dy) = (x1 - x0, y1 - y0);
                    let len2 = dx * dx + dy * dy;
                    let t = if len2 == 0.0 {
                        0.0
                    } else {
                        (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0)
                    };
                    let d = ((px - x0 - t * dx).powi(2) + (py - y0 - t * dy).powi(2)).sqrt();
                    if d <= width / 2.0 {
                        m.set(r, c, true);
                    }
                }
            }
        }
        m
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn harden_inverts_one_hot(t in label_map(24)) {
        prop_assert_eq!(harden(&one_hot(&t)), t);
    }

    #[test]
    fn vafp_round_trip_is_bit_exact(
        (h, w, c, values) in (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(h, w, c)| {
            (Just(h), Just(w), Just(c), prop::collection::vec(any::<f32>(), h * w * c))
        })
    ) {
        let planes = VafpPlanes { height: h, width: w, channels: c, values };
        let mut buf = Vec::new();
        write_vafp(&mut buf, &planes).unwrap();
        let back = read_vafp(buf.as_slice()).unwrap();
        prop_assert_eq!((back.height, back.width, back.channels), (h, w, c));
        let same = back.values.iter().zip(&planes.values).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn thinning_is_idempotent(m in mask(24, 0.6)) {
        let once = skeletonize(&m);
        prop_assert!(once.is_subset_of(&m));
        prop_assert_eq!(skeletonize(&once), once);
    }

    #[test]
    fn branches_partition_the_skeleton(m in mask(24, 0.5)) {
        let sk = skeletonize(&m);
        let g = decompose_branches(&sk);
        let branch_pixels: usize = g.segments.iter().map(|b| b.pixels.len()).sum();
        prop_assert_eq!(branch_pixels + g.junctions.len(), sk.count());
        for b in &g.segments {
            prop_assert!(b.chord_length <= b.arc_length + 1e-12, "{:?}", b);
        }
    }

    #[test]
    fn thinning_keeps_tube_components(m in tubes()) {
        let before = connected_components(&m, Connectivity::Eight).count;
        let after = connected_components(&skeletonize(&m), Connectivity::Eight).count;
        prop_assert_eq!(before, after);
    }

    #[test]
    fn box_counts_are_monotone(m in mask(40, 0.05)) {
        prop_assume!(!m.is_empty());
        let curve = box_counts(&m).unwrap();
        for pair in curve.counts.windows(2) {
            prop_assert!(pair[0] >= pair[1]);
            prop_assert!(4 * pair[1] >= pair[0]);
        }
        if let Ok(d) = fractal_dimension(&curve) {
            prop_assert!((-1e-9..=2.0 + 1e-9).contains(&d), "{}", d);
        }
    }

    #[test]
    fn density_is_translation_invariant(m in mask(12, 0.4), dr in 0usize..8, dc in 0usize..8) {
        let big = |r0: usize, c0: usize| {
            BinaryMask::from_fn(20, 20, |r, c| {
                r >= r0 && c >= c0 && r - r0 < m.height() && c - c0 < m.width() && m.get(r - r0, c - c0)
            })
        };
        prop_assert_eq!(vessel_density(&big(0, 0)), vessel_density(&big(dr, dc)));
    }

    #[test]
    fn loss_b_is_translation_invariant(seed in any::<u64>(), shift in 0usize..3) {
        // 16×48: largest box 16, so shifting the content by 16 columns keeps every tiling aligned
        let (s_small, t_small) = gradcheck::random_pair(16, 16, seed);
        let embed = |col0: usize| {
            let n = 16 * 48;
            let mut values = vec![0.0; NUM_CLASSES * n];
            let mut labels = vec![0u8; n];
            for r in 0..16 {
                for c in 0..48 {
                    let p = r * 48 + c;
                    if (col0..col0 + 16).contains(&c) {
                        let q = r * 16 + (c - col0);
                        labels[p] = t_small.labels()[q];
                        for k in 0..NUM_CLASSES {
                            values[k * n + p] = s_small.values()[k * 256 + q];
                        }
                    } else {
                        values[p] = 1.0;
                    }
                }
            }
            (ProbMap::new(16, 48, values).unwrap(), LabelMap::new(16, 48, labels).unwrap())
        };
        let cfg = LossConfig::default();
        let (s0, t0) = embed(0);
        let (s1, t1) = embed(16 * shift);
        prop_assert_eq!(loss_b_value(&s0, &t0, &cfg).unwrap(), loss_b_value(&s1, &t1, &cfg).unwrap());
    }

    #[test]
    fn loss_b_stays_below_shape_ceiling(h in 2usize..20, w in 2usize..20, seed in any::<u64>()) {
        let (s, t) = gradcheck::random_pair(h, w, seed);
        let lb = loss_b_value(&s, &t, &LossConfig::default()).unwrap();
        prop_assert!(lb <= loss_b_ceiling(h, w), "{} > {}", lb, loss_b_ceiling(h, w));
    }

    #[test]
    fn dice_jaccard_identity(a in label_map(16), seed in any::<u64>()) {
        let (_, b) = gradcheck::random_pair(a.height(), a.width(), seed);
        for c in seg_scores(&a, &b).unwrap().per_class {
            let via_iou = 2.0 * c.iou / (1.0 + c.iou);
            prop_assert!((c.f1 - via_iou).abs() <= 1e-15, "{} vs {}", c.f1, via_iou);
        }
    }

    #[test]
    fn betti_numbers_add_over_disjoint_masks(a in mask(10, 0.5), b in mask(10, 0.5)) {
        // one empty column between the two keeps them apart under 8-connectivity
        let w = a.width() + 1 + b.width();
        let h = a.height().max(b.height());
        let joint = BinaryMask::from_fn(h, w, |r, c| {
            if c < a.width() {
                r < a.height() && a.get(r, c)
            } else if c > a.width() {
                r < b.height() && b.get(r, c - a.width() - 1)
            } else {
                false
            }
        });
        let (ba, bb, bj) = (betti_numbers(&a), betti_numbers(&b), betti_numbers(&joint));
        prop_assert_eq!(bj.b0, ba.b0 + bb.b0);
        prop_assert_eq!(bj.b1, ba.b1 + bb.b1);
    }

    #[test]
    fn icc_is_symmetric_in_raters(pairs in prop::collection::vec((0.0..10.0f64, 0.0..10.0f64), 3..30)) {
        let swapped: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        match (icc_point(&pairs), icc_point(&swapped)) {
            (Ok(x), Ok(y)) => prop_assert!((x - y).abs() <= 1e-12),
            (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
        }
    }

    #[test]
    fn u_statistics_sum_to_nm(
        a in prop::collection::vec(-5i32..5, 1..15),
        b in prop::collection::vec(-5i32..5, 1..15),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let r = mann_whitney_u(&a, &b).unwrap();
        prop_assert_eq!(r.u_a + r.u_b, (a.len() * b.len()) as f64);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn rank_auc_matches_trapezoid_without_ties(
        points in prop::collection::btree_map(0u32..1_000_000, 0u8..2, 2..80)
    ) {
        let (scores, labels): (Vec<f64>, Vec<u8>) = points.into_iter().map(|(s, l)| (f64::from(s), l)).unzip();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let rank = auc_roc(&scores, &labels).unwrap();
        let area = trapezoid(&roc_curve(&scores, &labels).unwrap());
        prop_assert!((rank - area).abs() <= 1e-12, "{} vs {}", rank, area);
    }
}
