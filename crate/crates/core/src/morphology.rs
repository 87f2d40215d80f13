//! Binary masks, thinning, component labelling, and branch decomposition.

use std::collections::VecDeque;

use thiserror::Error;

use crate::raster_io::{Class, LabelMap};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MorphError {
    #[error("class id {0} is not a vessel class (expected 1, 2 or 3)")]
    BadClassId(u8),
    #[error("mask has {got} cells, expected {height}x{width}")]
    ShapeMismatch { height: usize, width: usize, got: usize },
}

/// Pixel coordinate as (row, col).
pub type Pixel = (usize, usize);

/// Offsets of the 8-neighbourhood, clockwise from north.
const RING: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, MorphError> {
        if bits.len() != height * width {
            return Err(MorphError::ShapeMismatch {
                height,
                width,
                got: bits.len(),
            });
        }
        Ok(Self { height, width, bits })
    }

    /// Builds a mask from a predicate on (row, col).
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    /// Out-of-bounds reads as background.
    pub fn get_signed(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.bits[row as usize * self.width + col as usize]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / self.width, i % self.width))
    }

    /// True when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Copy with a background border of `pad` pixels on every side.
    pub fn padded(&self, pad: usize) -> BinaryMask {
        let mut out = BinaryMask::new(self.height + 2 * pad, self.width + 2 * pad);
        for (r, c) in self.pixels() {
            out.set(r + pad, c + pad, true);
        }
        out
    }

    /// Bitwise complement.
    pub fn inverted(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Sub-window copy; the window is clipped to the mask bounds.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> BinaryMask {
        let h = height.min(self.height.saturating_sub(row));
        let w = width.min(self.width.saturating_sub(col));
        BinaryMask::from_fn(h, w, |r, c| self.get(row + r, col + c))
    }

    fn neighbours(&self, row: usize, col: usize) -> [bool; 8] {
        let mut out = [false; 8];
        for (slot, (dr, dc)) in out.iter_mut().zip(RING) {
            *slot = self.get_signed(row as isize + dr, col as isize + dc);
        }
        out
    }

    fn neighbour_count(&self, row: usize, col: usize) -> usize {
        self.neighbours(row, col).iter().filter(|&&b| b).count()
    }
}

/// Pixels of a single vessel class.
pub fn class_mask(map: &LabelMap, class_id: u8) -> Result<BinaryMask, MorphError> {
    if !(1..=3).contains(&class_id) {
        return Err(MorphError::BadClassId(class_id));
    }
    Ok(BinaryMask {
        height: map.height(),
        width: map.width(),
        bits: map.labels().iter().map(|&l| l == class_id).collect(),
    })
}

pub fn vessel_mask(map: &LabelMap, class: Class) -> BinaryMask {
    BinaryMask {
        height: map.height(),
        width: map.width(),
        bits: map.labels().iter().map(|&l| l == class.id()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (0, 1), (1, 0), (0, -1)],
            Connectivity::Eight => &RING,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

/// Component labelling: 0 is background, components are numbered from 1 in raster order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub count: usize,
    pub labels: Vec<u32>,
}

pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Components {
    let mut labels = vec![0u32; mask.bits.len()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..mask.bits.len() {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / mask.width) as isize, (i % mask.width) as isize);
            for &(dr, dc) in connectivity.offsets() {
                let (nr, nc) = (r + dr, c + dc);
                if mask.get_signed(nr, nc) {
                    let j = nr as usize * mask.width + nc as usize;
                    if labels[j] == 0 {
                        labels[j] = count;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    Components {
        count: count as usize,
        labels,
    }
}

/// Thins a mask to a one-pixel-wide skeleton.
///
/// Zhang–Suen subiterations (with the Lü–Wang neighbour bound of 3..=6)
/// run to a fixed point, then a raster-order pass removes simple non-end
/// pixels left on staircases and at junction clusters. The two stages
/// alternate with pruning of spurs of up to two pixels until nothing
/// changes. A subiteration that would change the number of 8-components
/// is redone pixel by pixel.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut out = mask.clone();
    loop {
        let mut changed = false;
        while zhang_suen_pass(&mut out) {
            changed = true;
        }
        changed |= remove_redundant_pixels(&mut out);
        changed |= prune_spurs(&mut out);
        if !changed {
            return out;
        }
    }
}

/// One full Zhang–Suen iteration (both subiterations). Returns whether anything was removed.
fn zhang_suen_pass(mask: &mut BinaryMask) -> bool {
    let mut removed_any = false;
    let mut marked = Vec::new();
    for step in 0..2 {
        marked.clear();
        for r in 0..mask.height {
            for c in 0..mask.width {
                if !mask.get(r, c) {
                    continue;
                }
                // p2..p9 = N, NE, E, SE, S, SW, W, NW
                let n = mask.neighbours(r, c);
                let b = n.iter().filter(|&&x| x).count();
                // 3 rather than 2: a tip with two adjacent neighbours would otherwise
                // be peeled repeatedly until a 2-thick diagonal vanishes
                if !(3..=6).contains(&b) {
                    continue;
                }
                let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
                if a != 1 {
                    continue;
                }
                let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                let keep = if step == 0 {
                    (p2 && p4 && p6) || (p4 && p6 && p8)
                } else {
                    (p2 && p4 && p8) || (p2 && p6 && p8)
                };
                if !keep {
                    marked.push((r, c));
                }
            }
        }
        if marked.is_empty() {
            continue;
        }
        let before = connected_components(mask, Connectivity::Eight).count;
        let saved = mask.clone();
        for &(r, c) in &marked {
            mask.set(r, c, false);
        }
        let mut removed = marked.len();
        if connected_components(mask, Connectivity::Eight).count != before {
            // parallel deletion erases 2×2 blocks and 2-thick diagonals;
            // redo this subiteration one pixel at a time, keeping only simple non-end points
            *mask = saved;
            removed = 0;
            for &(r, c) in &marked {
                let n = mask.neighbours(r, c);
                if n.iter().filter(|&&x| x).count() >= 2 && local_component_counts(&n) == (1, 1) {
                    mask.set(r, c, false);
                    removed += 1;
                }
            }
        }
        removed_any |= removed > 0;
    }
    removed_any
}

/// Foreground 8-components and background 4-components (touching the
/// centre) within the 3×3 neighbourhood, centre excluded.
fn local_component_counts(n: &[bool; 8]) -> (usize, usize) {
    // ring index -> (dr, dc) is RING; cells i and j are 8-adjacent when their
    // offsets differ by at most one in each axis, 4-adjacent when exactly one axis differs by one.
    let mut fg_seen = [false; 8];
    let mut fg = 0;
    for s in 0..8 {
        if !n[s] || fg_seen[s] {
            continue;
        }
        fg += 1;
        let mut stack = vec![s];
        fg_seen[s] = true;
        while let Some(i) = stack.pop() {
            for j in 0..8 {
                if n[j] && !fg_seen[j] && chebyshev(RING[i], RING[j]) == 1 {
                    fg_seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    let mut bg_seen = [false; 8];
    let mut bg = 0;
    for s in [0, 2, 4, 6] {
        if n[s] || bg_seen[s] {
            continue;
        }
        bg += 1;
        let mut stack = vec![s];
        bg_seen[s] = true;
        while let Some(i) = stack.pop() {
            for j in 0..8 {
                if !n[j] && !bg_seen[j] && manhattan(RING[i], RING[j]) == 1 {
                    bg_seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    (fg, bg)
}

fn chebyshev(a: (isize, isize), b: (isize, isize)) -> isize {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

fn manhattan(a: (isize, isize), b: (isize, isize)) -> isize {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// Longest end-to-junction run removed as a thinning artefact.
const MAX_SPUR: usize = 2;

/// Removes runs of at most [`MAX_SPUR`] pixels that lead from an end point to a junction.
fn prune_spurs(mask: &mut BinaryMask) -> bool {
    let ends: Vec<Pixel> = mask
        .pixels()
        .filter(|&(r, c)| mask.neighbour_count(r, c) == 1)
        .collect();
    let mut spurs = Vec::new();
    for end in ends {
        let mut run = vec![end];
        let (mut prev, mut cur) = (None, end);
        loop {
            let next: Vec<Pixel> = RING
                .iter()
                .filter_map(|&(dr, dc)| {
                    let (r, c) = (cur.0 as isize + dr, cur.1 as isize + dc);
                    mask.get_signed(r, c).then_some((r as usize, c as usize))
                })
                .filter(|&p| Some(p) != prev)
                .collect();
            if next.len() != 1 {
                break;
            }
            let step = next[0];
            if mask.neighbour_count(step.0, step.1) >= 3 {
                // reached a junction
                if run.len() <= MAX_SPUR {
                    spurs.extend_from_slice(&run);
                }
                break;
            }
            if run.len() > MAX_SPUR || mask.neighbour_count(step.0, step.1) != 2 {
                break;
            }
            run.push(step);
            prev = Some(cur);
            cur = step;
        }
    }
    for &(r, c) in &spurs {
        mask.set(r, c, false);
    }
    !spurs.is_empty()
}

/// Exactly two neighbours, next to each other on the ring: the end of a 2-thick run.
fn is_tip(n: &[bool; 8]) -> bool {
    let set: Vec<usize> = (0..8).filter(|&i| n[i]).collect();
    set.len() == 2 && (set[1] - set[0] == 1 || set[1] - set[0] == 7)
}

fn remove_redundant_pixels(mask: &mut BinaryMask) -> bool {
    let mut removed = false;
    for r in 0..mask.height {
        for c in 0..mask.width {
            if !mask.get(r, c) {
                continue;
            }
            let n = mask.neighbours(r, c);
            if n.iter().filter(|&&x| x).count() < 2 || is_tip(&n) {
                continue;
            }
            if local_component_counts(&n) == (1, 1) {
                mask.set(r, c, false);
                removed = true;
            }
        }
    }
    removed
}

/// A junction-free run of skeleton pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub pixels: Vec<Pixel>,
    pub arc_length: f64,
    pub chord_length: f64,
    /// Fewer than three pixels; excluded from tortuosity.
    pub degenerate: bool,
}

impl Branch {
    pub fn from_path(pixels: Vec<Pixel>) -> Self {
        let arc_length = pixels.windows(2).map(|w| step_length(w[0], w[1])).sum();
        let chord_length = match (pixels.first(), pixels.last()) {
            (Some(&a), Some(&b)) => euclidean(a, b),
            _ => 0.0,
        };
        let degenerate = pixels.len() < 3;
        Self {
            pixels,
            arc_length,
            chord_length,
            degenerate,
        }
    }
}

fn step_length(a: Pixel, b: Pixel) -> f64 {
    if a.0 != b.0 && a.1 != b.1 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

fn euclidean(a: Pixel, b: Pixel) -> f64 {
    let dr = a.0 as f64 - b.0 as f64;
    let dc = a.1 as f64 - b.1 as f64;
    dr.hypot(dc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselGraph {
    pub skeleton: BinaryMask,
    pub segments: Vec<Branch>,
    pub junctions: Vec<Pixel>,
}

/// Splits a thinned skeleton at pixels with three or more skeleton neighbours.
pub fn decompose_branches(skeleton: &BinaryMask) -> VesselGraph {
    let (h, w) = (skeleton.height, skeleton.width);
    let mut junction = vec![false; h * w];
    let mut junctions = Vec::new();
    for (r, c) in skeleton.pixels() {
        if skeleton.neighbour_count(r, c) >= 3 {
            junction[r * w + c] = true;
            junctions.push((r, c));
        }
    }
    let on_path = |r: isize, c: isize| skeleton.get_signed(r, c) && !junction[r as usize * w + c as usize];
    let path_neighbours = |(r, c): Pixel| -> Vec<Pixel> {
        // orthogonal first so walks take the shortest available step
        let mut out = Vec::with_capacity(8);
        for pass in [[0, 2, 4, 6], [1, 3, 5, 7]] {
            for i in pass {
                let (dr, dc) = RING[i];
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if on_path(nr, nc) {
                    out.push((nr as usize, nc as usize));
                }
            }
        }
        out
    };

    let mut visited = vec![false; h * w];
    let mut segments = Vec::new();
    // Endpoints first so open paths are walked from one end.
    let candidates: Vec<Pixel> = skeleton.pixels().filter(|&(r, c)| !junction[r * w + c]).collect();
    let ends = candidates.iter().copied().filter(|&p| path_neighbours(p).len() <= 1);
    let rest = candidates.iter().copied();
    for start in ends.chain(rest).collect::<Vec<_>>() {
        if visited[start.0 * w + start.1] {
            continue;
        }
        let mut path = vec![start];
        visited[start.0 * w + start.1] = true;
        let mut current = start;
        while let Some(next) = path_neighbours(current).into_iter().find(|&(r, c)| !visited[r * w + c]) {
            visited[next.0 * w + next.1] = true;
            path.push(next);
            current = next;
        }
        segments.push(Branch::from_path(path));
    }
    VesselGraph {
        skeleton: skeleton.clone(),
        segments,
        junctions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from_rows(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(h, w, |r, c| rows[r].as_bytes()[c] == b'#')
    }

    fn has_full_2x2(mask: &BinaryMask) -> bool {
        (0..mask.height() - 1).any(|r| {
            (0..mask.width() - 1)
                .any(|c| mask.get(r, c) && mask.get(r + 1, c) && mask.get(r, c + 1) && mask.get(r + 1, c + 1))
        })
    }

    #[test]
    fn class_mask_selects_label() {
        let map = LabelMap::new(1, 2, vec![1, 2]).unwrap();
        assert_eq!(class_mask(&map, 2).unwrap().bits(), &[false, true]);
        let bg = LabelMap::filled(4, 4, Class::Background);
        assert!(class_mask(&bg, 1).unwrap().is_empty());
        assert_eq!(class_mask(&map, 0), Err(MorphError::BadClassId(0)));
        assert_eq!(class_mask(&map, 4), Err(MorphError::BadClassId(4)));
    }

    #[test]
    fn empty_mask_skeleton_is_empty() {
        let m = BinaryMask::new(10, 10);
        assert_eq!(skeletonize(&m), m);
    }

    #[test]
    fn short_spur_is_pruned() {
        let m = mask_from_rows(&[
            "...........", //
            "###########", //
            ".....#.....", //
            "...........", //
        ]);
        let g = decompose_branches(&skeletonize(&m));
        assert!(g.junctions.is_empty());
        assert_eq!(g.segments.len(), 1);
    }

    #[test]
    fn small_blocks_keep_a_pixel() {
        let block = BinaryMask::from_fn(6, 6, |r, c| (2..4).contains(&r) && (2..4).contains(&c));
        let sk = skeletonize(&block);
        assert!(!sk.is_empty());
        assert_eq!(connected_components(&sk, Connectivity::Eight).count, 1);
        let diagonal = BinaryMask::from_fn(12, 12, |r, c| (1..11).contains(&r) && (c == r || c == r + 1));
        let sk = skeletonize(&diagonal);
        assert_eq!(connected_components(&sk, Connectivity::Eight).count, 1);
        assert!(sk.count() >= 8, "{}", sk.count());
    }

    #[test]
    fn horizontal_bar_thins_to_centre_line() {
        let bar = BinaryMask::from_fn(9, 104, |r, c| (2..7).contains(&r) && (2..102).contains(&c));
        let sk = skeletonize(&bar);
        assert!(sk.is_subset_of(&bar));
        assert!(!has_full_2x2(&sk));
        let rows: Vec<usize> = sk.pixels().map(|p| p.0).collect();
        assert!(rows.iter().all(|&r| r == 4), "skeleton off the medial row: {rows:?}");
        let n = sk.count();
        // end erosion trims roughly half the bar width at each end
        assert!((94..=100).contains(&n), "skeleton length {n}");
        let g = decompose_branches(&sk);
        assert_eq!(g.segments.len(), 1);
        assert!(g.junctions.is_empty());
    }

    #[test]
    fn filled_disk_collapses_near_centre() {
        let disk = BinaryMask::from_fn(45, 45, |r, c| {
            let (dr, dc) = (r as f64 - 22.0, c as f64 - 22.0);
            dr * dr + dc * dc <= 400.0
        });
        let sk = skeletonize(&disk);
        assert!(sk.is_subset_of(&disk));
        assert!(sk.count() <= 5, "disk skeleton has {} pixels", sk.count());
        assert!(sk.count() >= 1);
        for (r, c) in sk.pixels() {
            let d = ((r as f64 - 22.0).powi(2) + (c as f64 - 22.0).powi(2)).sqrt();
            assert!(d <= 3.0);
        }
    }

    #[test]
    fn staircase_pixels_are_removed() {
        let m = mask_from_rows(&[
            "#.....", //
            "##....", //
            ".##...", //
            "..##..", //
            "...##.", //
        ]);
        let sk = skeletonize(&m);
        let g = decompose_branches(&sk);
        assert!(g.junctions.is_empty());
        assert_eq!(g.segments.len(), 1);
        assert_eq!(connected_components(&sk, Connectivity::Eight).count, 1);
    }

    #[test]
    fn components_by_connectivity() {
        assert_eq!(
            connected_components(&BinaryMask::new(3, 3), Connectivity::Eight).count,
            0
        );
        let diag = mask_from_rows(&["#.", ".#"]);
        assert_eq!(connected_components(&diag, Connectivity::Eight).count, 1);
        assert_eq!(connected_components(&diag, Connectivity::Four).count, 2);
        let dots = mask_from_rows(&["#.#.#"]);
        let comps = connected_components(&dots, Connectivity::Eight);
        assert_eq!(comps.count, 3);
        assert_eq!(comps.labels, vec![1, 0, 2, 0, 3]);
    }

    #[test]
    fn straight_path_is_one_branch() {
        let m = BinaryMask::from_fn(3, 13, |r, c| r == 1 && (1..12).contains(&c));
        let g = decompose_branches(&m);
        assert_eq!(g.segments.len(), 1);
        let b = &g.segments[0];
        assert_eq!(b.pixels.len(), 11);
        assert_eq!(b.arc_length, 10.0);
        assert_eq!(b.chord_length, 10.0);
        assert!(!b.degenerate);
    }

    #[test]
    fn y_shape_has_three_arms() {
        // hand-traced: centre (12,12), arms of 10 pixels each going N, SW and SE
        let mut m = BinaryMask::new(25, 25);
        m.set(12, 12, true);
        for k in 1..=10 {
            m.set(12 - k, 12, true);
            m.set(12 + k, 12 - k, true);
            m.set(12 + k, 12 + k, true);
        }
        let g = decompose_branches(&m);
        assert_eq!(g.junctions, vec![(12, 12)]);
        assert_eq!(g.segments.len(), 3);
        let mut arcs: Vec<f64> = g.segments.iter().map(|b| b.arc_length).collect();
        arcs.sort_by(f64::total_cmp);
        let diag = 9.0 * std::f64::consts::SQRT_2;
        for (got, want) in arcs.iter().zip([9.0, diag, diag]) {
            assert!((got - want).abs() < 1e-12, "{arcs:?}");
        }
        for b in &g.segments {
            assert_eq!(b.pixels.len(), 10);
            assert!((b.arc_length - b.chord_length).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_pixel_is_degenerate_branch() {
        let mut m = BinaryMask::new(5, 5);
        m.set(2, 2, true);
        let g = decompose_branches(&m);
        assert_eq!(g.segments.len(), 1);
        let b = &g.segments[0];
        assert_eq!((b.arc_length, b.chord_length), (0.0, 0.0));
        assert!(b.degenerate);
    }

    #[test]
    fn closed_loop_is_walked_once() {
        let ring = mask_from_rows(&[
            ".###.", //
            "#...#", //
            "#...#", //
            "#...#", //
            ".###.", //
        ]);
        let g = decompose_branches(&ring);
        assert!(g.junctions.is_empty());
        assert_eq!(g.segments.len(), 1);
        assert_eq!(g.segments[0].pixels.len(), 12);
        assert!(g.segments[0].chord_length < 3.0);
    }

    #[test]
    fn junction_cluster_reduces_to_single_pixel() {
        // T junction drawn with a thick centre; arms longer than a spur
        let m = mask_from_rows(&[
            "...........", //
            "###########", //
            ".....#.....", //
            ".....#.....", //
            ".....#.....", //
            ".....#.....", //
            ".....#.....", //
        ]);
        let sk = skeletonize(&m);
        let g = decompose_branches(&sk);
        assert_eq!(g.junctions.len(), 1);
        assert_eq!(g.segments.len(), 3);
    }
}
