//! Turns a synergy map and the background Gaussian into labelled point prompts.

use serde::{Deserialize, Serialize};

use crate::cmsm::GaussianModel;
use crate::data::ConfidenceMap;
use crate::error::{Error, Result};
use crate::flags::{push_unique, Flag};
use crate::kmeans::kmeans;
use crate::rng::Pcg32;
use crate::scalar::Scalar;

/// Tolerance for band membership when the Gaussian is degenerate.
pub const DEGENERATE_BAND_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Negative = 0,
    Positive = 1,
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            _ => Err(format!("label must be 0 or 1, got {v}")),
        }
    }
}

/// One point on the segmenter's image grid. `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: u32,
    pub y: u32,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub points: Vec<PointPrompt>,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl PromptSet {
    pub fn positives(&self) -> impl Iterator<Item = &PointPrompt> {
        self.points.iter().filter(|p| p.label == Label::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &PointPrompt> {
        self.points.iter().filter(|p| p.label == Label::Negative)
    }
}

/// Where negative candidates come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeStrategy {
    /// Pixels inside `[mu - alpha*sigma, mu - beta*sigma]` of the background Gaussian.
    Band,
    /// The bottom of the confidence ranking.
    LeastSimilar,
    /// Positives only.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub k_pos: usize,
    pub k_neg: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub negatives: NegativeStrategy,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            k_pos: 4,
            k_neg: 4,
            gamma1: 8.0,
            gamma2: 8.0,
            alpha: 0.0,
            beta: -1.5,
            seed: 0,
            negatives: NegativeStrategy::Band,
        }
    }
}

impl SelectionConfig {
    /// One positive at the maximum and one negative at the minimum, no clustering.
    pub fn argmax_baseline() -> Self {
        Self {
            k_pos: 1,
            k_neg: 1,
            gamma1: 1.0,
            gamma2: 1.0,
            negatives: NegativeStrategy::LeastSimilar,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_pos == 0 {
            return Err(Error::Config("k_pos must be >= 1".into()));
        }
        if !(self.gamma1.is_finite() && self.gamma1 >= 1.0 && self.gamma2.is_finite() && self.gamma2 >= 1.0) {
            return Err(Error::Config(format!(
                "gamma1/gamma2 must be finite and >= 1, got {}/{}",
                self.gamma1, self.gamma2
            )));
        }
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.alpha > self.beta) {
            return Err(Error::Config(format!(
                "need alpha > beta, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn positive_pool(&self) -> usize {
        scaled_count(self.gamma1, self.k_pos)
    }

    pub fn negative_pool(&self) -> usize {
        scaled_count(self.gamma2, self.k_neg)
    }
}

/// `ceil(gamma * k)`, ignoring float noise just above an integer.
fn scaled_count(gamma: f64, k: usize) -> usize {
    (gamma * k as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Pixel indices (row-major) by descending confidence, ties by ascending index.
pub fn rank_pixels<T: Scalar>(syn: &ConfidenceMap<T>) -> Vec<usize> {
    let v = syn.as_slice();
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).expect("finite confidences").then(a.cmp(&b)));
    order
}

/// Pixels chosen on the confidence map's own grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    /// `(row, col)` on the map grid.
    pub pixels: Vec<(usize, usize)>,
    /// Size of the candidate pool clustering ran on.
    pub pool: usize,
    pub flags: Vec<Flag>,
}

/// Clusters `candidates` (row-major pixel indices) into `k` groups and snaps each
/// centroid onto its nearest candidate.
fn cluster_and_snap<T: Scalar>(
    candidates: &[usize],
    width: usize,
    k: usize,
    rng: &mut Pcg32,
    reduced_flag: Flag,
) -> Result<Selection> {
    let mut sel = Selection {
        pool: candidates.len(),
        ..Selection::default()
    };
    if candidates.is_empty() || k == 0 {
        return Ok(sel);
    }
    let coords: Vec<[T; 2]> = candidates
        .iter()
        .map(|&i| [T::of((i / width) as f64), T::of((i % width) as f64)])
        .collect();
    let km = kmeans(&coords, k, rng)?;
    if km.reduced {
        push_unique(&mut sel.flags, reduced_flag);
    }
    for c in &km.centroids {
        let snapped = snap(c, candidates, &coords);
        let px = (snapped / width, snapped % width);
        if sel.pixels.contains(&px) {
            push_unique(&mut sel.flags, Flag::SnapCollision);
        } else {
            sel.pixels.push(px);
        }
    }
    Ok(sel)
}

/// Nearest candidate to `c`; ties go to the lower row-major index.
fn snap<T: Scalar>(c: &[T; 2], candidates: &[usize], coords: &[[T; 2]]) -> usize {
    let mut best: Option<(T, usize)> = None;
    for (&idx, p) in candidates.iter().zip(coords) {
        let d = (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]);
        best = match best {
            Some((bd, bi)) if bd < d || (bd == d && bi < idx) => Some((bd, bi)),
            _ => Some((d, idx)),
        };
    }
    best.expect("non-empty candidates").1
}

/// Top `ceil(gamma1 * k_pos)` pixels, clustered into `k_pos` prompts.
pub fn select_positive<T: Scalar>(
    syn: &ConfidenceMap<T>,
    ranked: &[usize],
    cfg: &SelectionConfig,
    rng: &mut Pcg32,
) -> Result<Selection> {
    let pool = cfg.positive_pool().min(ranked.len());
    cluster_and_snap::<T>(&ranked[..pool], syn.width(), cfg.k_pos, rng, Flag::PositiveKReduced)
}

/// Closed interval `[mu - alpha*sigma, mu - beta*sigma]`.
pub fn negative_band<T: Scalar>(g: &GaussianModel<T>, cfg: &SelectionConfig) -> (T, T) {
    (g.mu - T::of(cfg.alpha) * g.sigma, g.mu - T::of(cfg.beta) * g.sigma)
}

pub fn in_band<T: Scalar>(value: T, g: &GaussianModel<T>, cfg: &SelectionConfig) -> bool {
    if g.is_degenerate() {
        return (value - g.mu).abs() <= T::of(DEGENERATE_BAND_EPS);
    }
    let (lo, hi) = negative_band(g, cfg);
    lo <= value && value <= hi
}

/// Band negatives: all in-band pixels, subsampled to `ceil(gamma2 * k_neg)` by a
/// seeded partial Fisher-Yates shuffle, then clustered into `k_neg` prompts.
pub fn select_negative<T: Scalar>(
    syn: &ConfidenceMap<T>,
    g: &GaussianModel<T>,
    cfg: &SelectionConfig,
    rng: &mut Pcg32,
) -> Result<Selection> {
    if !(g.mu.is_finite() && g.sigma.is_finite()) {
        return Err(Error::Data("Gaussian parameters must be finite".into()));
    }
    if cfg.k_neg == 0 {
        return Ok(Selection::default());
    }
    let mut candidates: Vec<usize> = syn
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &v)| in_band(v, g, cfg))
        .map(|(i, _)| i)
        .collect();
    let mut flags = Vec::new();
    if g.is_degenerate() {
        flags.push(Flag::DegenerateGaussian);
    }
    if candidates.is_empty() {
        flags.push(Flag::NoNegatives);
        return Ok(Selection {
            flags,
            ..Selection::default()
        });
    }
    let budget = cfg.negative_pool();
    if candidates.len() > budget {
        for i in 0..budget {
            let j = i + rng.below((candidates.len() - i) as u32) as usize;
            candidates.swap(i, j);
        }
        candidates.truncate(budget);
    }
    let mut sel = cluster_and_snap::<T>(&candidates, syn.width(), cfg.k_neg, rng, Flag::NegativeKReduced)?;
    flags.append(&mut sel.flags);
    sel.flags = flags;
    Ok(sel)
}

/// Bottom `ceil(gamma2 * k_neg)` of the ranking, clustered into `k_neg` prompts.
pub fn select_least_similar<T: Scalar>(
    syn: &ConfidenceMap<T>,
    ranked: &[usize],
    cfg: &SelectionConfig,
    rng: &mut Pcg32,
) -> Result<Selection> {
    let pool = cfg.negative_pool().min(ranked.len());
    let bottom: Vec<usize> = ranked.iter().rev().take(pool).copied().collect();
    cluster_and_snap::<T>(&bottom, syn.width(), cfg.k_neg, rng, Flag::NegativeKReduced)
}

/// Maps a map-grid pixel to the centre of its block on the image grid.
pub fn to_image_grid(px: (usize, usize), map_dims: (usize, usize), image_dims: (usize, usize)) -> (u32, u32) {
    let scale = |v: usize, from: usize, to: usize| ((2 * v + 1) * to / (2 * from)) as u32;
    (
        scale(px.1, map_dims.1, image_dims.1),
        scale(px.0, map_dims.0, image_dims.0),
    )
}

/// Union of labelled positives and negatives on the image grid. A pixel in both
/// lists stays positive and the collision is flagged.
pub fn assemble_prompts(
    pos: &Selection,
    neg: &Selection,
    map_dims: (usize, usize),
    image_dims: (usize, usize),
) -> PromptSet {
    let mut flags = Vec::new();
    pos.flags
        .iter()
        .chain(&neg.flags)
        .for_each(|&f| push_unique(&mut flags, f));
    let mut points = Vec::with_capacity(pos.pixels.len() + neg.pixels.len());
    for &px in &pos.pixels {
        let (x, y) = to_image_grid(px, map_dims, image_dims);
        points.push(PointPrompt {
            x,
            y,
            label: Label::Positive,
        });
    }
    for &px in &neg.pixels {
        if pos.pixels.contains(&px) {
            push_unique(&mut flags, Flag::PromptCollision);
            continue;
        }
        let (x, y) = to_image_grid(px, map_dims, image_dims);
        points.push(PointPrompt {
            x,
            y,
            label: Label::Negative,
        });
    }
    PromptSet { points, flags }
}

/// Both selections plus the assembled prompt set.
#[derive(Debug, Clone)]
pub struct PromptSelection {
    pub positives: Selection,
    pub negatives: Selection,
    pub prompts: PromptSet,
}

/// Full point-selection stage. Positives consume the rng stream before negatives.
pub fn select_prompts<T: Scalar>(
    syn: &ConfidenceMap<T>,
    g: &GaussianModel<T>,
    cfg: &SelectionConfig,
    rng: &mut Pcg32,
    image_dims: (usize, usize),
) -> Result<PromptSelection> {
    cfg.validate()?;
    let ranked = rank_pixels(syn);
    let positives = select_positive(syn, &ranked, cfg, rng)?;
    let negatives = match cfg.negatives {
        NegativeStrategy::Band => select_negative(syn, g, cfg, rng)?,
        NegativeStrategy::LeastSimilar => select_least_similar(syn, &ranked, cfg, rng)?,
        NegativeStrategy::None => Selection::default(),
    };
    let prompts = assemble_prompts(&positives, &negatives, syn.dims(), image_dims);
    Ok(PromptSelection {
        positives,
        negatives,
        prompts,
    })
}
