//! Synthetic support/query pairs with an analytic oracle scene.
//!
//! Each query holds a target organ, a rim ring around it, a confusable organ
//! whose fused confidence sits inside the negative band (with a small hotspot
//! that looks like the target), and background. Feature values are built so
//! the fused confidence of every region lands at its configured level,
//! measured against the Gaussian actually fitted on the generated support.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cmsm::{
    background_confidences, extract_background, extract_prototypes, fit_gaussian, FusionWeights, GaussianModel,
};
use crate::data::{
    save_features, save_field, save_mask, Backbone, BinaryMask, CaseEntry, CaseInputs, ConfidenceMap, FeatureMap,
    Manifest, QueryPaths, SupportPaths,
};
use crate::error::{Error, Result};
use crate::morph::{open_mask, MorphConfig};
use crate::rng::Pcg32;
use crate::segmenter::{OracleScene, OracleSegmenter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub cases: usize,
    pub seed: u64,
    pub organs: Vec<String>,
    pub folds: u32,
    pub feature_size: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Weights the generator solves against; must match the evaluated config.
    pub fusion: FusionWeights,
    /// Per-channel std of the noise added to target features.
    pub noise: f64,
    /// Side-length ranges (inclusive, feature cells).
    pub support_target: [usize; 2],
    pub query_target: [usize; 2],
    pub confusable: [usize; 2],
    pub hotspot: [usize; 2],
    /// Share of support background cells (scattered) holding confusable tissue.
    pub support_confusable_fraction: f64,
    /// Fused confidence of that support tissue.
    pub support_confusable_level: f64,
    /// SAM similarity of the query confusable body (high: SAM alone is fooled).
    pub confusable_sam: f64,
    /// Confusable body sits at `mu + (band_center ± band_jitter) * sigma`.
    pub band_center: f64,
    pub band_jitter: f64,
    pub rim_kappa: f64,
    pub rim_sam: f64,
    /// Query background at `mu + kappa * sigma`; `None` makes it orthogonal.
    pub background_kappa: Option<f64>,
    pub background_jitter: f64,
    pub scene_threshold: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            cases: 60,
            seed: 42,
            organs: ["liver", "spleen", "left_kidney", "right_kidney"]
                .map(String::from)
                .to_vec(),
            folds: 5,
            feature_size: 32,
            image_size: 128,
            channels: 16,
            fusion: FusionWeights::default(),
            noise: 0.1,
            support_target: [6, 9],
            query_target: [8, 11],
            confusable: [7, 10],
            hotspot: [3, 4],
            support_confusable_fraction: 0.2,
            support_confusable_level: 0.4,
            confusable_sam: 0.97,
            band_center: 0.75,
            band_jitter: 0.7,
            rim_kappa: 1.9,
            rim_sam: 0.6,
            background_kappa: Some(-0.25),
            background_jitter: 0.1,
            scene_threshold: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        self.fusion.validate()?;
        if self.feature_size == 0 || !self.image_size.is_multiple_of(self.feature_size) {
            return bad(format!(
                "image_size {} must be a multiple of feature_size {}",
                self.image_size, self.feature_size
            ));
        }
        if self.channels < 3 {
            return bad("need at least 3 channels".into());
        }
        if self.organs.is_empty() || self.folds == 0 {
            return bad("organs and folds must be non-empty".into());
        }
        for (name, [lo, hi]) in [
            ("support_target", self.support_target),
            ("query_target", self.query_target),
            ("confusable", self.confusable),
            ("hotspot", self.hotspot),
        ] {
            if lo == 0 || lo > hi || hi > self.feature_size {
                return bad(format!(
                    "{name} range [{lo}, {hi}] invalid for a {} grid",
                    self.feature_size
                ));
            }
        }
        if self.query_target[0] < 3 {
            return bad("query target needs an interior inside its rim".into());
        }
        if self.hotspot[1] > self.confusable[0] {
            return bad("hotspot must fit inside the confusable organ".into());
        }
        if !(0.0..1.0).contains(&self.support_confusable_fraction)
            || !(0.0..=1.0).contains(&self.support_confusable_level)
        {
            return bad("support confusable fraction/level out of range".into());
        }
        if self.noise < 0.0 || self.band_jitter < 0.0 || self.background_jitter < 0.0 {
            return bad("noise and jitter must be non-negative".into());
        }
        Ok(())
    }

    pub fn case_id(&self, i: usize) -> String {
        format!("synth-{i:03}")
    }
}

/// What a query feature cell was generated as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tissue {
    Background,
    Target,
    Rim,
    Confusable,
    Hotspot,
}

#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub inputs: CaseInputs<f32>,
    /// Oracle intensity on the image grid.
    pub scene: ConfidenceMap<f32>,
    pub scene_threshold: f64,
    /// Query tissue labels on the feature grid.
    pub tissue: Vec<Tissue>,
    /// Gaussian of the generated support's background confidences.
    pub gaussian: GaussianModel<f64>,
}

impl SyntheticCase {
    pub fn oracle_scene(&self) -> OracleScene {
        OracleScene::new(&self.scene, self.scene_threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn contains(&self, r: usize, c: usize) -> bool {
        (self.r0..self.r0 + self.h).contains(&r) && (self.c0..self.c0 + self.w).contains(&c)
    }

    fn on_border(&self, r: usize, c: usize) -> bool {
        self.contains(r, c) && (r == self.r0 || c == self.c0 || r + 1 == self.r0 + self.h || c + 1 == self.c0 + self.w)
    }

    /// True when at least `gap` empty cells separate the two rects.
    fn apart(&self, o: &Rect, gap: usize) -> bool {
        self.r0 >= o.r0 + o.h + gap
            || o.r0 >= self.r0 + self.h + gap
            || self.c0 >= o.c0 + o.w + gap
            || o.c0 >= self.c0 + self.w + gap
    }

    fn scaled(&self, s: usize, dims: (usize, usize)) -> BinaryMask {
        BinaryMask::from_fn(dims.0, dims.1, |r, c| self.contains(r / s, c / s))
    }
}

fn side(rng: &mut Pcg32, [lo, hi]: [usize; 2]) -> usize {
    lo + rng.below((hi - lo + 1) as u32) as usize
}

fn place(
    rng: &mut Pcg32,
    n: usize,
    h: usize,
    w: usize,
    within: Option<Rect>,
    avoid: &[Rect],
    gap: usize,
) -> Result<Rect> {
    let area = within.unwrap_or(Rect {
        r0: 0,
        c0: 0,
        h: n,
        w: n,
    });
    if h > area.h || w > area.w {
        return Err(Error::Spec(format!(
            "a {h}x{w} region does not fit in {}x{}",
            area.h, area.w
        )));
    }
    for _ in 0..1000 {
        let rect = Rect {
            r0: area.r0 + rng.below((area.h - h + 1) as u32) as usize,
            c0: area.c0 + rng.below((area.w - w + 1) as u32) as usize,
            h,
            w,
        };
        if avoid.iter().all(|a| rect.apart(a, gap)) {
            return Ok(rect);
        }
    }
    Err(Error::Spec(format!(
        "could not place a {h}x{w} region on a {n}x{n} grid"
    )))
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn random_unit(rng: &mut Pcg32, c: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
    unit(&mut v);
    v
}

/// Unit vector with cosine exactly `s` to the unit vector `p`.
fn at_similarity(rng: &mut Pcg32, p: &[f64], s: f64) -> Vec<f64> {
    let mut u: Vec<f64> = (0..p.len()).map(|_| rng.normal()).collect();
    let d: f64 = u.iter().zip(p).map(|(a, b)| a * b).sum();
    u.iter_mut().zip(p).for_each(|(a, b)| *a -= d * b);
    unit(&mut u);
    let t = (1.0 - s * s).max(0.0).sqrt();
    p.iter().zip(&u).map(|(a, b)| s * a + t * b).collect()
}

fn noisy_copy(rng: &mut Pcg32, p: &[f64], noise: f64) -> Vec<f64> {
    let mut v: Vec<f64> = p.iter().map(|x| x + noise * rng.normal()).collect();
    unit(&mut v);
    v
}

/// DINO similarity that, paired with SAM similarity `sam`, fuses to `target`.
fn solve_dino(w: &FusionWeights, sam: f64, target: f64) -> Result<f64> {
    let denom = w.delta_sd * sam + w.delta_d;
    let d = (target - w.delta_s * sam) / denom;
    if denom <= 0.0 || !d.is_finite() || !(-1.0..=1.0).contains(&d) {
        return Err(Error::Spec(format!(
            "fused level {target:.4} is unreachable with SAM similarity {sam:.4} under the given weights"
        )));
    }
    Ok(d)
}

/// SAM/DINO similarity pair on the diagonal that fuses to `target`.
fn symmetric_pair(w: &FusionWeights, target: f64) -> Result<f64> {
    // delta_sd s^2 + (delta_s + delta_d) s - target = 0
    let (a, b) = (w.delta_sd, w.delta_s + w.delta_d);
    let s = if a.abs() < 1e-12 {
        target / b
    } else {
        let disc = b * b + 4.0 * a * target;
        if disc < 0.0 {
            return Err(Error::Spec(format!(
                "fused level {target:.4} unreachable on the diagonal"
            )));
        }
        (-b + disc.sqrt()) / (2.0 * a)
    };
    if !s.is_finite() || !(-1.0..=1.0).contains(&s) {
        return Err(Error::Spec(format!(
            "fused level {target:.4} unreachable on the diagonal"
        )));
    }
    Ok(s)
}

struct Planes {
    sam: Vec<f64>,
    dino: Vec<f64>,
}

impl Planes {
    fn new(n: usize, c: usize) -> Self {
        Self {
            sam: vec![0.0; n * n * c],
            dino: vec![0.0; n * n * c],
        }
    }

    fn set(&mut self, i: usize, c: usize, sam: &[f64], dino: &[f64]) {
        self.sam[i * c..(i + 1) * c].copy_from_slice(sam);
        self.dino[i * c..(i + 1) * c].copy_from_slice(dino);
    }

    fn into_maps(self, n: usize, c: usize) -> Result<(FeatureMap<f32>, FeatureMap<f32>)> {
        let f = |v: Vec<f64>, b| FeatureMap::new(n, n, c, v.into_iter().map(|x| x as f32).collect(), b);
        Ok((f(self.sam, Backbone::Sam)?, f(self.dino, Backbone::Dino)?))
    }
}

pub fn generate_synthetic_case(
    spec: &SynthSpec,
    id: &str,
    organ: &str,
    fold: u32,
    rng: &mut Pcg32,
) -> Result<SyntheticCase> {
    spec.validate()?;
    let (n, c, w) = (spec.feature_size, spec.channels, &spec.fusion);
    let scale = spec.image_size / n;
    let image = (spec.image_size, spec.image_size);
    let p_sam = random_unit(rng, c);
    let p_dino = random_unit(rng, c);

    // Support: exact prototypes on the target, orthogonal background, and a
    // patch of confusable tissue that gives the background Gaussian its spread.
    let target = {
        let (h, wd) = (side(rng, spec.support_target), side(rng, spec.support_target));
        place(rng, n, h, wd, None, &[], 0)?
    };
    let mut bg: Vec<usize> = (0..n * n).filter(|&i| !target.contains(i / n, i % n)).collect();
    let n_patch = (spec.support_confusable_fraction * bg.len() as f64).round() as usize;
    for k in 0..n_patch {
        let j = k + rng.below((bg.len() - k) as u32) as usize;
        bg.swap(k, j);
    }
    let mut patch = vec![false; n * n];
    bg[..n_patch].iter().for_each(|&i| patch[i] = true);
    let s_sam = spec.confusable_sam.min(0.99);
    let s_dino = solve_dino(w, s_sam, spec.support_confusable_level)?;
    let mut support = Planes::new(n, c);
    for (i, &in_patch) in patch.iter().enumerate() {
        let (r, col) = (i / n, i % n);
        if target.contains(r, col) {
            support.set(i, c, &p_sam, &p_dino);
        } else if in_patch {
            let (a, b) = (at_similarity(rng, &p_sam, s_sam), at_similarity(rng, &p_dino, s_dino));
            support.set(i, c, &a, &b);
        } else {
            let (a, b) = (at_similarity(rng, &p_sam, 0.0), at_similarity(rng, &p_dino, 0.0));
            support.set(i, c, &a, &b);
        }
    }
    let (support_sam, support_dino) = support.into_maps(n, c)?;
    let support_mask_feat = BinaryMask::from_fn(n, n, |r, col| target.contains(r, col));
    let gaussian = {
        let (ss, sd) = (support_sam.cast::<f64>(), support_dino.cast::<f64>());
        let sam = background_confidences(
            &extract_prototypes(&ss, &support_mask_feat)?,
            &extract_background(&ss, &support_mask_feat)?,
        )?;
        let dino = background_confidences(
            &extract_prototypes(&sd, &support_mask_feat)?,
            &extract_background(&sd, &support_mask_feat)?,
        )?;
        let fused: Vec<f64> = sam.iter().zip(&dino).map(|(&a, &b)| w.apply(a, b)).collect();
        fit_gaussian(&fused)?
    };
    if gaussian.sigma < 1e-6 {
        return Err(Error::Spec(
            "support background has no spread; the negative band is empty".into(),
        ));
    }
    let (mu, sigma) = (gaussian.mu, gaussian.sigma);

    // Query layout.
    let q_target = {
        let (h, wd) = (side(rng, spec.query_target), side(rng, spec.query_target));
        place(rng, n, h, wd, None, &[], 0)?
    };
    let confusable = {
        let (h, wd) = (side(rng, spec.confusable), side(rng, spec.confusable));
        place(rng, n, h, wd, None, &[q_target], 2)?
    };
    let hotspot = {
        let s = side(rng, spec.hotspot);
        place(rng, n, s, s, Some(confusable), &[], 0)?
    };

    let rim_dino = solve_dino(w, spec.rim_sam, mu + spec.rim_kappa * sigma)?;
    let mut query = Planes::new(n, c);
    let mut tissue = Vec::with_capacity(n * n);
    for i in 0..n * n {
        let (r, col) = (i / n, i % n);
        let (kind, a, b) = if q_target.on_border(r, col) {
            let a = at_similarity(rng, &p_sam, spec.rim_sam);
            (Tissue::Rim, a, at_similarity(rng, &p_dino, rim_dino))
        } else if q_target.contains(r, col) {
            (
                Tissue::Target,
                noisy_copy(rng, &p_sam, spec.noise),
                noisy_copy(rng, &p_dino, spec.noise),
            )
        } else if hotspot.contains(r, col) {
            (
                Tissue::Hotspot,
                noisy_copy(rng, &p_sam, spec.noise),
                noisy_copy(rng, &p_dino, spec.noise),
            )
        } else if confusable.contains(r, col) {
            let kappa = spec.band_center + spec.band_jitter * rng.uniform(-1.0, 1.0);
            let s = (spec.confusable_sam + 0.01 * rng.uniform(-1.0, 1.0)).min(0.999);
            let d = solve_dino(w, s, mu + kappa * sigma)?;
            (
                Tissue::Confusable,
                at_similarity(rng, &p_sam, s),
                at_similarity(rng, &p_dino, d),
            )
        } else {
            let s = match spec.background_kappa {
                None => 0.0,
                Some(k) => symmetric_pair(w, mu + (k + spec.background_jitter * rng.uniform(-1.0, 1.0)) * sigma)?,
            };
            (
                Tissue::Background,
                at_similarity(rng, &p_sam, s),
                at_similarity(rng, &p_dino, s),
            )
        };
        tissue.push(kind);
        query.set(i, c, &a, &b);
    }
    let (query_sam, query_dino) = query.into_maps(n, c)?;

    let target_img = open_mask(&q_target.scaled(scale, image), &MorphConfig::default());
    let confusable_img = confusable.scaled(scale, image);
    let scene = ConfidenceMap::new(
        image.0,
        image.1,
        target_img
            .as_slice()
            .iter()
            .zip(confusable_img.as_slice())
            .map(|(&t, &k)| if t || k { 1.0f32 } else { 0.0 })
            .collect(),
    )?;

    let inputs = CaseInputs {
        id: id.to_string(),
        organ: organ.to_string(),
        fold,
        support_sam,
        support_dino,
        query_sam,
        query_dino,
        support_mask: target.scaled(scale, image),
        ground_truth: Some(target_img),
    };
    inputs.validate()?;
    Ok(SyntheticCase {
        inputs,
        scene,
        scene_threshold: spec.scene_threshold,
        tissue,
        gaussian,
    })
}

/// Generates `spec.cases` cases; case `i` gets organ `i % organs` and fold `i % folds`.
pub fn generate_suite(spec: &SynthSpec) -> Result<Vec<SyntheticCase>> {
    spec.validate()?;
    (0..spec.cases)
        .map(|i| {
            let id = spec.case_id(i);
            let organ = &spec.organs[i % spec.organs.len()];
            let fold = (i as u32) % spec.folds;
            generate_synthetic_case(spec, &id, organ, fold, &mut Pcg32::for_case(spec.seed, &id))
        })
        .collect()
}

pub fn oracle_for(cases: &[SyntheticCase]) -> OracleSegmenter {
    let mut seg = OracleSegmenter::new();
    cases
        .iter()
        .for_each(|c| seg.insert(c.inputs.id.clone(), c.oracle_scene()));
    seg
}

/// Writes every case's arrays under `dir/<id>/` and returns the saved manifest
/// (`dir/manifest.json`).
pub fn write_suite(dir: impl AsRef<Path>, cases: &[SyntheticCase]) -> Result<Manifest> {
    let dir = dir.as_ref();
    let mut entries = Vec::with_capacity(cases.len());
    for case in cases {
        let inp = &case.inputs;
        let sub = PathBuf::from(&inp.id);
        fs::create_dir_all(dir.join(&sub)).map_err(|e| Error::io(dir.join(&sub), e))?;
        let rel = |name: &str| sub.join(name);
        save_features(dir.join(rel("support_sam.npy")), &inp.support_sam)?;
        save_features(dir.join(rel("support_dino.npy")), &inp.support_dino)?;
        save_features(dir.join(rel("query_sam.npy")), &inp.query_sam)?;
        save_features(dir.join(rel("query_dino.npy")), &inp.query_dino)?;
        save_mask(dir.join(rel("support_mask.npy")), &inp.support_mask)?;
        if let Some(gt) = &inp.ground_truth {
            save_mask(dir.join(rel("query_gt.npy")), gt)?;
        }
        save_field(dir.join(rel("scene.npy")), &case.scene)?;
        entries.push(CaseEntry {
            id: inp.id.clone(),
            organ: inp.organ.clone(),
            fold: inp.fold,
            support: SupportPaths {
                sam: rel("support_sam.npy"),
                dino: rel("support_dino.npy"),
                mask: rel("support_mask.npy"),
            },
            query: QueryPaths {
                sam: rel("query_sam.npy"),
                dino: rel("query_dino.npy"),
                gt: inp.ground_truth.as_ref().map(|_| rel("query_gt.npy")),
                scene: Some(rel("scene.npy")),
                scene_threshold: Some(case.scene_threshold),
            },
        });
    }
    let manifest = Manifest::new(entries, dir);
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmsm::{build_synergy, FeaturePair};
    use crate::data::downsample_mask;

    fn synergy(case: &SyntheticCase, w: &FusionWeights) -> crate::cmsm::Synergy<f64> {
        let i = &case.inputs;
        let (ss, sd, qs, qd) = (
            i.support_sam.cast(),
            i.support_dino.cast(),
            i.query_sam.cast(),
            i.query_dino.cast(),
        );
        let (h, wd) = i.feature_dims();
        let m = downsample_mask(&i.support_mask, h, wd).unwrap();
        build_synergy(
            FeaturePair { sam: &ss, dino: &sd },
            FeaturePair { sam: &qs, dino: &qd },
            &m,
            w,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_target_fuses_to_one() {
        let spec = SynthSpec {
            noise: 0.0,
            ..SynthSpec::default()
        };
        let case = generate_synthetic_case(&spec, "a", "liver", 0, &mut Pcg32::new(1)).unwrap();
        let syn = synergy(&case, &spec.fusion);
        for (v, t) in syn.map.as_slice().iter().zip(&case.tissue) {
            if *t == Tissue::Target {
                assert!((v - 1.0).abs() < 1e-6, "{v}");
            }
        }
    }

    #[test]
    fn confusable_at_band_center_is_inside_band() {
        let spec = SynthSpec {
            band_jitter: 0.0,
            ..SynthSpec::default()
        };
        let case = generate_synthetic_case(&spec, "b", "liver", 0, &mut Pcg32::new(2)).unwrap();
        let syn = synergy(&case, &spec.fusion);
        let (mu, sigma) = (syn.gaussian.mu, syn.gaussian.sigma);
        assert!((mu - case.gaussian.mu).abs() < 1e-6);
        for (v, t) in syn.map.as_slice().iter().zip(&case.tissue) {
            if *t == Tissue::Confusable {
                assert!(*v >= mu && *v <= mu + 1.5 * sigma);
                assert!((v - (mu + 0.75 * sigma)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn orthogonal_background_fuses_to_zero() {
        let spec = SynthSpec {
            background_kappa: None,
            ..SynthSpec::default()
        };
        let case = generate_synthetic_case(&spec, "c", "liver", 0, &mut Pcg32::new(3)).unwrap();
        let syn = synergy(&case, &spec.fusion);
        for (v, t) in syn.map.as_slice().iter().zip(&case.tissue) {
            if *t == Tissue::Background {
                assert!(v.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let flat = SynthSpec {
            support_confusable_fraction: 0.0,
            ..SynthSpec::default()
        };
        let res = generate_synthetic_case(&flat, "d", "liver", 0, &mut Pcg32::new(4));
        assert!(matches!(res, Err(Error::Spec(_))));
        let sam_only = SynthSpec {
            fusion: FusionWeights::sam_only(),
            ..SynthSpec::default()
        };
        assert!(matches!(generate_suite(&sam_only), Err(Error::Spec(_))));
    }

    #[test]
    fn ground_truth_is_a_scene_component() {
        let case = generate_synthetic_case(&SynthSpec::default(), "e", "liver", 0, &mut Pcg32::new(5)).unwrap();
        assert_eq!(case.oracle_scene().component_count(), 2);
        let gt = case.inputs.ground_truth.as_ref().unwrap();
        assert!(gt.foreground().all(|(r, c)| case.scene.get(r, c) == 1.0));
    }
}
