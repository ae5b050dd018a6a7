use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::npy::{load_features, load_mask};
use super::{Backbone, BinaryMask, FeatureMap};

/// Case list shared with the feature exporter. Paths are relative to the
/// manifest's own directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cases: Vec<CaseEntry>,
    #[serde(skip)]
    root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub organ: String,
    pub fold: u32,
    pub support: SupportPaths,
    pub query: QueryPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPaths {
    pub sam: PathBuf,
    pub dino: PathBuf,
    pub mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPaths {
    pub sam: PathBuf,
    pub dino: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    /// Intensity field for the oracle segmenter (synthetic cases only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_threshold: Option<f64>,
}

/// Everything one case needs in memory.
#[derive(Debug, Clone)]
pub struct CaseInputs<T> {
    pub id: String,
    pub organ: String,
    pub fold: u32,
    pub support_sam: FeatureMap<T>,
    pub support_dino: FeatureMap<T>,
    pub query_sam: FeatureMap<T>,
    pub query_dino: FeatureMap<T>,
    /// Support mask on the image grid.
    pub support_mask: BinaryMask,
    pub ground_truth: Option<BinaryMask>,
}

impl Manifest {
    pub fn new(cases: Vec<CaseEntry>, root: impl Into<PathBuf>) -> Self {
        Self {
            cases,
            root: root.into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = manifest.cases.iter().find(|c| !seen.insert(c.id.as_str())) {
            return Err(Error::Config(format!("duplicate case id {:?}", dup.id)));
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Loads and validates one case's tensors.
    pub fn load_case<T: Scalar>(&self, entry: &CaseEntry) -> Result<CaseInputs<T>> {
        let feat = |p: &Path, b| load_features(self.resolve(p), b).map(|f| f.cast::<T>());
        let inputs = CaseInputs {
            id: entry.id.clone(),
            organ: entry.organ.clone(),
            fold: entry.fold,
            support_sam: feat(&entry.support.sam, Backbone::Sam)?,
            support_dino: feat(&entry.support.dino, Backbone::Dino)?,
            query_sam: feat(&entry.query.sam, Backbone::Sam)?,
            query_dino: feat(&entry.query.dino, Backbone::Dino)?,
            support_mask: load_mask(self.resolve(&entry.support.mask))?,
            ground_truth: entry
                .query
                .gt
                .as_ref()
                .map(|p| load_mask(self.resolve(p)))
                .transpose()?,
        };
        inputs.validate()?;
        Ok(inputs)
    }
}

impl<T: Scalar> CaseInputs<T> {
    /// Feature grid `(h, w)` shared by both backbones.
    pub fn feature_dims(&self) -> (usize, usize) {
        (self.query_sam.height(), self.query_sam.width())
    }

    pub fn cast<U: Scalar>(&self) -> CaseInputs<U> {
        CaseInputs {
            id: self.id.clone(),
            organ: self.organ.clone(),
            fold: self.fold,
            support_sam: self.support_sam.cast(),
            support_dino: self.support_dino.cast(),
            query_sam: self.query_sam.cast(),
            query_dino: self.query_dino.cast(),
            support_mask: self.support_mask.clone(),
            ground_truth: self.ground_truth.clone(),
        }
    }

    /// Image grid `(H, W)`, taken from the support mask.
    pub fn image_dims(&self) -> (usize, usize) {
        self.support_mask.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let same = |a: &FeatureMap<T>, b: &FeatureMap<T>| {
            (a.height(), a.width(), a.channels()) == (b.height(), b.width(), b.channels())
        };
        if !same(&self.support_sam, &self.query_sam) {
            return Err(Error::Shape(format!(
                "{}: SAM support/query feature shapes differ",
                self.id
            )));
        }
        if !same(&self.support_dino, &self.query_dino) {
            return Err(Error::Shape(format!(
                "{}: DINO support/query feature shapes differ",
                self.id
            )));
        }
        let dims = |f: &FeatureMap<T>| (f.height(), f.width());
        if dims(&self.query_sam) != dims(&self.query_dino) {
            return Err(Error::Shape(format!(
                "{}: backbones disagree on feature grid {:?} vs {:?}",
                self.id,
                dims(&self.query_sam),
                dims(&self.query_dino)
            )));
        }
        let (h, w) = self.feature_dims();
        let (big_h, big_w) = self.image_dims();
        if big_h % h != 0 || big_w % w != 0 {
            return Err(Error::Resolution(format!(
                "{}: image grid {big_h}x{big_w} is not a multiple of feature grid {h}x{w}",
                self.id
            )));
        }
        if let Some(gt) = &self.ground_truth {
            if gt.dims() != self.image_dims() {
                return Err(Error::Shape(format!(
                    "{}: ground truth dims differ from support mask",
                    self.id
                )));
            }
        }
        Ok(())
    }
}
