//! Promptable-segmenter boundary, a rule-based oracle backend for tests and
//! synthetic runs, and a replay backend keyed by request digest.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::npy::{load_field, load_mask, save_mask};
use crate::data::{BinaryMask, ConfidenceMap, Manifest};
use crate::error::{Error, Result};
use crate::morph::label_components;
use crate::psm::{Label, PointPrompt, PromptSet};

/// Version tag folded into every request digest.
pub const DIGEST_VERSION: u32 = 1;

/// Minimum fraction of a component covered by the mask prompt for the oracle
/// to keep it without a positive point.
pub const MASK_PROMPT_OVERLAP: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRequest {
    pub image_ref: String,
    pub height: usize,
    pub width: usize,
    pub prompts: PromptSet,
    pub mask_prompt: Option<BinaryMask>,
}

impl SegmentRequest {
    pub fn new(image_ref: impl Into<String>, dims: (usize, usize), prompts: PromptSet) -> Self {
        Self {
            image_ref: image_ref.into(),
            height: dims.0,
            width: dims.1,
            prompts,
            mask_prompt: None,
        }
    }

    pub fn with_mask_prompt(mut self, mask: BinaryMask) -> Self {
        self.mask_prompt = Some(mask);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self
            .prompts
            .points
            .iter()
            .find(|p| p.x as usize >= self.width || p.y as usize >= self.height)
        {
            return Err(Error::Input(format!(
                "prompt ({}, {}) outside {}x{} image",
                p.x, p.y, self.height, self.width
            )));
        }
        if let Some(m) = &self.mask_prompt {
            if m.dims() != (self.height, self.width) {
                return Err(Error::Input(format!("mask prompt {:?} does not match image", m.dims())));
            }
        }
        if self.prompts.positives().next().is_none() && self.mask_prompt.is_none() {
            return Err(Error::Input("request needs a positive point or a mask prompt".into()));
        }
        Ok(())
    }

    /// Canonical compact JSON: points sorted, mask summarised by its own hash.
    pub fn canonical_json(&self) -> String {
        #[derive(Serialize)]
        struct MaskRef {
            height: usize,
            width: usize,
            sha256: String,
        }
        #[derive(Serialize)]
        struct Canonical<'a> {
            version: u32,
            image_ref: &'a str,
            height: usize,
            width: usize,
            points: Vec<[u32; 3]>,
            mask: Option<MaskRef>,
        }
        let mut points: Vec<[u32; 3]> = self
            .prompts
            .points
            .iter()
            .map(|p| [p.x, p.y, u8::from(p.label) as u32])
            .collect();
        points.sort_unstable();
        points.dedup();
        let mask = self.mask_prompt.as_ref().map(|m| MaskRef {
            height: m.height(),
            width: m.width(),
            sha256: hex(&Sha256::digest(
                m.as_slice().iter().map(|&b| b as u8).collect::<Vec<_>>(),
            )),
        });
        let c = Canonical {
            version: DIGEST_VERSION,
            image_ref: &self.image_ref,
            height: self.height,
            width: self.width,
            points,
            mask,
        };
        serde_json::to_string(&c).expect("canonical request serializes")
    }

    /// SHA-256 of [`canonical_json`](Self::canonical_json), lowercase hex.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// A promptable segmentation backend. Identical requests must yield identical masks.
pub trait Segmenter: Send + Sync {
    fn segment(&self, req: &SegmentRequest) -> Result<BinaryMask>;
}

/// Intensity field whose thresholded components stand in for objects.
#[derive(Debug, Clone)]
pub struct OracleScene {
    height: usize,
    width: usize,
    labels: Vec<Option<usize>>,
    sizes: Vec<usize>,
}

impl OracleScene {
    pub fn new(intensity: &ConfidenceMap<f32>, threshold: f64) -> Self {
        let (height, width) = intensity.dims();
        let fg = BinaryMask::from_vec(
            height,
            width,
            intensity.as_slice().iter().map(|&v| v as f64 >= threshold).collect(),
        )
        .expect("same dims");
        let (labels, count) = label_components(&fg);
        let mut sizes = vec![0; count];
        labels.iter().flatten().for_each(|&l| sizes[l] += 1);
        Self {
            height,
            width,
            labels,
            sizes,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn component_count(&self) -> usize {
        self.sizes.len()
    }

    /// Components hit by a positive or sufficiently covered by the mask
    /// prompt, minus any component containing a negative.
    pub fn segment(&self, req: &SegmentRequest) -> Result<BinaryMask> {
        req.validate()?;
        if (req.height, req.width) != self.dims() {
            return Err(Error::Input(format!(
                "request grid {}x{} does not match scene {:?}",
                req.height,
                req.width,
                self.dims()
            )));
        }
        let label_at = |p: &PointPrompt| self.labels[p.y as usize * self.width + p.x as usize];
        let mut selected = vec![false; self.sizes.len()];
        let mut dropped = vec![false; self.sizes.len()];
        for p in &req.prompts.points {
            if let Some(l) = label_at(p) {
                match p.label {
                    Label::Positive => selected[l] = true,
                    Label::Negative => dropped[l] = true,
                }
            }
        }
        if let Some(mask) = &req.mask_prompt {
            let mut overlap = vec![0usize; self.sizes.len()];
            for (l, &m) in self.labels.iter().zip(mask.as_slice()) {
                if let (Some(l), true) = (l, m) {
                    overlap[*l] += 1;
                }
            }
            for (l, &o) in overlap.iter().enumerate() {
                if o as f64 >= MASK_PROMPT_OVERLAP * self.sizes[l] as f64 {
                    selected[l] = true;
                }
            }
        }
        let keep: Vec<bool> = selected.iter().zip(&dropped).map(|(&s, &d)| s && !d).collect();
        let data = self.labels.iter().map(|l| l.is_some_and(|l| keep[l])).collect();
        BinaryMask::from_vec(self.height, self.width, data)
    }
}

/// Oracle backend over a set of scenes keyed by image reference.
#[derive(Debug, Clone, Default)]
pub struct OracleSegmenter {
    scenes: HashMap<String, OracleScene>,
}

impl OracleSegmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_ref: impl Into<String>, scene: OracleScene) {
        self.scenes.insert(image_ref.into(), scene);
    }

    pub fn contains(&self, image_ref: &str) -> bool {
        self.scenes.contains_key(image_ref)
    }

    /// Builds scenes from each case's `query.scene` field (threshold defaults to 0.5).
    pub fn from_manifest(manifest: &Manifest) -> Result<Self> {
        let mut seg = Self::new();
        for case in &manifest.cases {
            let path = case.query.scene.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "case {:?} has no query.scene; the oracle segmenter needs one",
                    case.id
                ))
            })?;
            let field = load_field(manifest.resolve(path))?;
            seg.insert(
                case.id.clone(),
                OracleScene::new(&field, case.query.scene_threshold.unwrap_or(0.5)),
            );
        }
        Ok(seg)
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&self, req: &SegmentRequest) -> Result<BinaryMask> {
        self.scenes
            .get(&req.image_ref)
            .ok_or_else(|| Error::Backend(format!("no oracle scene for {:?}", req.image_ref)))?
            .segment(req)
    }
}

/// Replays masks stored as `<dir>/<digest>.npy`. Misses are written to
/// `<dir>/requests/<digest>.json` (plus the mask prompt as NPY) so an external
/// segmenter can fill them in.
#[derive(Debug, Clone)]
pub struct FileSegmenter {
    dir: PathBuf,
    record_misses: bool,
}

impl FileSegmenter {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            record_misses: true,
        }
    }

    pub fn record_misses(mut self, on: bool) -> Self {
        self.record_misses = on;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn mask_path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.npy"))
    }

    /// Stores `mask` as the answer to `req`.
    pub fn store(&self, req: &SegmentRequest, mask: &BinaryMask) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.mask_path(&req.digest());
        save_mask(&path, mask)?;
        Ok(path)
    }

    fn record(&self, req: &SegmentRequest, digest: &str) -> Result<()> {
        let dir = self.dir.join("requests");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        if let Some(m) = &req.mask_prompt {
            save_mask(dir.join(format!("{digest}.mask.npy")), m)?;
        }
        let path = dir.join(format!("{digest}.json"));
        fs::write(&path, req.canonical_json() + "\n").map_err(|e| Error::io(&path, e))
    }
}

impl Segmenter for FileSegmenter {
    fn segment(&self, req: &SegmentRequest) -> Result<BinaryMask> {
        req.validate()?;
        let digest = req.digest();
        let path = self.mask_path(&digest);
        if !path.exists() {
            if self.record_misses {
                self.record(req, &digest)?;
            }
            return Err(Error::Backend(format!("no replay mask for digest {digest}")));
        }
        let mask = load_mask(&path)?;
        if mask.dims() != (req.height, req.width) {
            return Err(Error::Backend(format!(
                "{}: stored mask has dims {:?}",
                path.display(),
                mask.dims()
            )));
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: u32, y: u32, label: Label) -> PointPrompt {
        PointPrompt { x, y, label }
    }

    fn req(points: Vec<PointPrompt>) -> SegmentRequest {
        SegmentRequest::new("case", (8, 8), PromptSet { points, flags: vec![] })
    }

    /// Two 3x3 blobs: A at rows/cols 0..3, B at rows/cols 5..8.
    fn scene() -> OracleScene {
        let data = (0..64)
            .map(|i| {
                let (r, c) = (i / 8, i % 8);
                if (r < 3 && c < 3) || (r >= 5 && c >= 5) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        OracleScene::new(&ConfidenceMap::new(8, 8, data).unwrap(), 0.5)
    }

    fn blob(lo: usize) -> BinaryMask {
        BinaryMask::from_fn(8, 8, |r, c| (lo..lo + 3).contains(&r) && (lo..lo + 3).contains(&c))
    }

    #[test]
    fn positive_selects_its_component() {
        let s = scene();
        assert_eq!(s.component_count(), 2);
        assert_eq!(s.segment(&req(vec![pt(1, 1, Label::Positive)])).unwrap(), blob(0));
    }

    #[test]
    fn negative_elsewhere_leaves_target() {
        let r = req(vec![pt(1, 1, Label::Positive), pt(6, 6, Label::Negative)]);
        assert_eq!(scene().segment(&r).unwrap(), blob(0));
    }

    #[test]
    fn negative_inside_drops_component() {
        let r = req(vec![pt(1, 1, Label::Positive), pt(2, 0, Label::Negative)]);
        assert!(scene().segment(&r).unwrap().is_empty());
    }

    #[test]
    fn mask_prompt_overlap_rule() {
        let s = scene();
        // 3 of B's 9 pixels = 33% >= 25%.
        let mut m = BinaryMask::new(8, 8);
        (5..8).for_each(|c| m.set(5, c, true));
        let r = req(vec![]).with_mask_prompt(m.clone());
        assert_eq!(s.segment(&r).unwrap(), blob(5));
        // 2 of 9 = 22% < 25%.
        m.set(5, 7, false);
        assert!(s.segment(&req(vec![]).with_mask_prompt(m)).unwrap().is_empty());
    }

    #[test]
    fn request_preconditions() {
        let s = scene();
        assert!(matches!(
            s.segment(&req(vec![pt(1, 1, Label::Negative)])),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            s.segment(&req(vec![pt(8, 1, Label::Positive)])),
            Err(Error::Input(_))
        ));
        let r = req(vec![pt(1, 1, Label::Positive)]);
        assert_eq!(s.segment(&r).unwrap(), s.segment(&r).unwrap());
    }

    #[test]
    fn digest_ignores_prompt_order() {
        let a = req(vec![pt(1, 1, Label::Positive), pt(6, 6, Label::Negative)]);
        let b = req(vec![pt(6, 6, Label::Negative), pt(1, 1, Label::Positive)]);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let c = req(vec![pt(1, 1, Label::Positive)]);
        assert_ne!(a.digest(), c.digest());
        assert_ne!(c.digest(), c.clone().with_mask_prompt(blob(0)).digest());
    }

    #[test]
    fn canonical_form_is_stable() {
        let r = req(vec![pt(6, 6, Label::Negative), pt(1, 2, Label::Positive)]);
        assert_eq!(
            r.canonical_json(),
            r#"{"version":1,"image_ref":"case","height":8,"width":8,"points":[[1,2,1],[6,6,0]],"mask":null}"#
        );
    }

    #[test]
    fn replay_round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let fs_seg = FileSegmenter::new(dir.path());
        let r = req(vec![pt(1, 1, Label::Positive)]);
        match fs_seg.segment(&r) {
            Err(Error::Backend(msg)) => assert!(msg.contains(&r.digest())),
            other => panic!("expected backend error, got {other:?}"),
        }
        assert!(dir
            .path()
            .join("requests")
            .join(format!("{}.json", r.digest()))
            .exists());

        fs_seg.store(&r, &blob(0)).unwrap();
        assert_eq!(fs_seg.segment(&r).unwrap(), blob(0));
    }
}
