//! Binary morphology with a 3x3 cross element and 8-connected component labelling.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::BinaryMask;

const CROSS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MorphConfig {
    pub erode_iters: usize,
    pub dilate_iters: usize,
}

impl Default for MorphConfig {
    fn default() -> Self {
        Self {
            erode_iters: 1,
            dilate_iters: 1,
        }
    }
}

fn neighbours(m: &BinaryMask, r: usize, c: usize) -> impl Iterator<Item = Option<bool>> + '_ {
    CROSS.iter().map(move |&(dr, dc)| {
        let (y, x) = (r as isize + dr, c as isize + dc);
        (y >= 0 && x >= 0 && (y as usize) < m.height() && (x as usize) < m.width())
            .then(|| m.get(y as usize, x as usize))
    })
}

/// Pixels outside the grid count as background, so foreground touching the
/// border erodes.
pub fn erode(m: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(m.height(), m.width(), |r, c| {
        m.get(r, c) && neighbours(m, r, c).all(|n| n == Some(true))
    })
}

pub fn dilate(m: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(m.height(), m.width(), |r, c| {
        m.get(r, c) || neighbours(m, r, c).any(|n| n == Some(true))
    })
}

pub fn open_mask(m: &BinaryMask, cfg: &MorphConfig) -> BinaryMask {
    let mut out = m.clone();
    for _ in 0..cfg.erode_iters {
        out = erode(&out);
    }
    for _ in 0..cfg.dilate_iters {
        out = dilate(&out);
    }
    out
}

/// One 8-connected foreground component.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: usize,
    /// `(row, col)` in discovery order; the first entry is the top-most,
    /// then left-most pixel.
    pub pixels: Vec<(usize, usize)>,
    pub mask: BinaryMask,
    /// Filled in by refinement scoring; `-inf` means disqualified or unscored.
    pub score: f64,
}

/// Per-pixel component labels (`None` for background) plus the component count.
pub fn label_components(m: &BinaryMask) -> (Vec<Option<usize>>, usize) {
    let (h, w) = m.dims();
    let mut labels = vec![None; h * w];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !m.as_slice()[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(next);
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (y, x) = (r as isize + dr, c as isize + dc);
                    if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
                        continue;
                    }
                    let j = y as usize * w + x as usize;
                    if m.as_slice()[j] && labels[j].is_none() {
                        labels[j] = Some(next);
                        queue.push_back(j);
                    }
                }
            }
        }
        next += 1;
    }
    (labels, next)
}

/// Components ordered by their top-most, then left-most pixel; ids are dense from 0.
pub fn connected_components(m: &BinaryMask) -> Vec<Region> {
    let (h, w) = m.dims();
    let (labels, count) = label_components(m);
    let mut regions: Vec<Region> = (0..count)
        .map(|id| Region {
            id,
            pixels: Vec::new(),
            mask: BinaryMask::new(h, w),
            score: f64::NEG_INFINITY,
        })
        .collect();
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = *l {
            regions[l].pixels.push((i / w, i % w));
            regions[l].mask.set(i / w, i % w, true);
        }
    }
    regions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(n: usize, lo: usize, hi: usize) -> BinaryMask {
        BinaryMask::from_fn(n, n, |r, c| (lo..hi).contains(&r) && (lo..hi).contains(&c))
    }

    #[test]
    fn empty_stays_empty() {
        assert!(open_mask(&BinaryMask::new(8, 8), &MorphConfig::default()).is_empty());
        assert!(connected_components(&BinaryMask::new(8, 8)).is_empty());
    }

    #[test]
    fn isolated_pixel_is_removed() {
        let mut m = BinaryMask::new(5, 5);
        m.set(2, 2, true);
        assert!(open_mask(&m, &MorphConfig::default()).is_empty());
    }

    #[test]
    fn square_keeps_all_but_corners() {
        let m = square(14, 2, 12);
        let opened = open_mask(&m, &MorphConfig::default());
        assert!(opened.is_subset_of(&m));
        assert_eq!(opened.count(), 100 - 4);
        for (r, c) in [(2, 2), (2, 11), (11, 2), (11, 11)] {
            assert!(!opened.get(r, c));
        }
        // Opening is idempotent.
        assert_eq!(open_mask(&opened, &MorphConfig::default()), opened);
    }

    #[test]
    fn diagonal_neighbours_join() {
        let mut m = BinaryMask::new(3, 3);
        m.set(0, 0, true);
        m.set(1, 1, true);
        assert_eq!(connected_components(&m).len(), 1);
    }

    #[test]
    fn checkerboard_is_one_region() {
        let m = BinaryMask::from_fn(4, 4, |r, c| (r + c) % 2 == 0);
        let regions = connected_components(&m);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].pixels.len(), 8);
    }

    #[test]
    fn regions_ordered_by_top_left_pixel() {
        let mut m = BinaryMask::new(6, 6);
        m.set(4, 0, true);
        m.set(1, 5, true);
        m.set(1, 2, true);
        let regions = connected_components(&m);
        let firsts: Vec<_> = regions.iter().map(|r| r.pixels[0]).collect();
        assert_eq!(firsts, vec![(1, 2), (1, 5), (4, 0)]);
        assert_eq!(regions.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
