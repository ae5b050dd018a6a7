//! Per-case orchestration: synergy maps, prompt selection, segmentation and refinement.

use rayon::prelude::*;
use serde::Serialize;

use crate::cmsm::{build_synergy, FeaturePair};
use crate::config::{PipelineConfig, PromptGrid};
use crate::data::{downsample_mask, upsample_map, BinaryMask, CaseInputs, ConfidenceMap};
use crate::error::{Error, Result};
use crate::flags::{push_unique, Flag};
use crate::nrm::{refine, PassReport, RefineContext};
use crate::psm::{in_band, negative_band, select_prompts, PromptSet};
use crate::rng::Pcg32;
use crate::scalar::Scalar;
use crate::segmenter::{SegmentRequest, Segmenter};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub synmap_min: f64,
    pub synmap_max: f64,
    pub mu: f64,
    pub sigma: f64,
    pub band: [f64; 2],
    /// Pixels of the selection map inside the negative band.
    pub band_occupancy: usize,
    pub positive_pool: usize,
    pub negative_pool: usize,
    pub positives: usize,
    pub negatives: usize,
    pub refine_passes: Vec<PassReport>,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone)]
pub struct CaseOutcome<T> {
    pub prompts: PromptSet,
    pub coarse: BinaryMask,
    pub final_mask: BinaryMask,
    /// Fused map on the feature grid.
    pub synergy_map: ConfidenceMap<T>,
    /// The map prompts were selected on (feature grid or upsampled).
    pub selection_map: ConfidenceMap<T>,
    pub diagnostics: Diagnostics,
}

pub fn run_case<T: Scalar>(
    inputs: &CaseInputs<T>,
    cfg: &PipelineConfig,
    segmenter: &dyn Segmenter,
) -> Result<CaseOutcome<T>> {
    cfg.validate()?;
    inputs.validate()?;
    let (h, w) = inputs.feature_dims();
    let image_dims = inputs.image_dims();
    let support_mask = downsample_mask(&inputs.support_mask, h, w)?;
    let support = FeaturePair {
        sam: &inputs.support_sam,
        dino: &inputs.support_dino,
    };
    let query = FeaturePair {
        sam: &inputs.query_sam,
        dino: &inputs.query_dino,
    };
    let synergy = build_synergy(support, query, &support_mask, &cfg.fusion)?;

    let mut flags = Vec::new();
    if synergy.gaussian.is_degenerate() {
        push_unique(&mut flags, Flag::DegenerateGaussian);
    }
    if synergy.sam_prototypes.excluded_zero() + synergy.dino_prototypes.excluded_zero() > 0 {
        push_unique(&mut flags, Flag::ZeroPrototypeVectors);
    }

    let selection_map = match cfg.prompt_grid {
        PromptGrid::Feature => synergy.map.clone(),
        PromptGrid::Image => upsample_map(&synergy.map, image_dims.0, image_dims.1)?,
    };
    let mut rng = Pcg32::for_case(cfg.selection.seed, &inputs.id);
    let selection = select_prompts(&selection_map, &synergy.gaussian, &cfg.selection, &mut rng, image_dims)?;
    selection.prompts.flags.iter().for_each(|&f| push_unique(&mut flags, f));

    let request = SegmentRequest::new(inputs.id.clone(), image_dims, selection.prompts.clone());
    let coarse = segmenter.segment(&request)?;

    let (final_mask, refine_passes) = if cfg.refine.enabled {
        let ctx = RefineContext {
            synergy: &synergy,
            query,
            prompts: &selection.prompts,
            image_ref: &inputs.id,
            segmenter,
            config: cfg.refine,
        };
        let refined = refine(&coarse, &ctx)?;
        refined.flags.iter().for_each(|&f| push_unique(&mut flags, f));
        (refined.mask, refined.passes)
    } else {
        (coarse.clone(), Vec::new())
    };

    let (lo, hi) = negative_band(&synergy.gaussian, &cfg.selection);
    let diagnostics = Diagnostics {
        synmap_min: synergy.map.min().as_f64(),
        synmap_max: synergy.map.max().as_f64(),
        mu: synergy.gaussian.mu.as_f64(),
        sigma: synergy.gaussian.sigma.as_f64(),
        band: [lo.as_f64(), hi.as_f64()],
        band_occupancy: selection_map
            .as_slice()
            .iter()
            .filter(|&&v| in_band(v, &synergy.gaussian, &cfg.selection))
            .count(),
        positive_pool: selection.positives.pool,
        negative_pool: selection.negatives.pool,
        positives: selection.prompts.positives().count(),
        negatives: selection.prompts.negatives().count(),
        refine_passes,
        flags,
    };
    Ok(CaseOutcome {
        prompts: selection.prompts,
        coarse,
        final_mask,
        synergy_map: synergy.map,
        selection_map,
        diagnostics,
    })
}

/// Identity of a case independent of whether its tensors load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseMeta {
    pub id: String,
    pub organ: String,
    pub fold: u32,
}

/// One case's result: the outcome (or failure) plus ground truth when present.
pub struct CaseRun<T> {
    pub meta: CaseMeta,
    pub result: Result<CaseOutcome<T>>,
    pub ground_truth: Option<BinaryMask>,
}

/// Runs every case on a pool of `workers` threads. Results come back in input
/// order and each case owns its rng stream, so output does not depend on
/// the worker count.
pub fn run_all<T, L>(
    metas: &[CaseMeta],
    load: L,
    cfg: &PipelineConfig,
    segmenter: &dyn Segmenter,
    workers: usize,
) -> Result<Vec<CaseRun<T>>>
where
    T: Scalar,
    L: Fn(usize) -> Result<CaseInputs<T>> + Sync,
{
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let runs = pool.install(|| {
        (0..metas.len())
            .into_par_iter()
            .map(|i| match load(i) {
                Ok(inputs) => CaseRun {
                    meta: metas[i].clone(),
                    result: run_case(&inputs, cfg, segmenter),
                    ground_truth: inputs.ground_truth,
                },
                Err(e) => CaseRun {
                    meta: metas[i].clone(),
                    result: Err(e),
                    ground_truth: None,
                },
            })
            .collect()
    });
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Backbone, FeatureMap};
    use crate::segmenter::{OracleScene, OracleSegmenter};

    fn tiny_case(mask: BinaryMask) -> CaseInputs<f64> {
        let f = |b| {
            let data = (0..16)
                .flat_map(|i| if i % 4 < 2 { [1.0, 0.0] } else { [0.0, 1.0] })
                .collect();
            FeatureMap::new(4, 4, 2, data, b).unwrap()
        };
        CaseInputs {
            id: "c".into(),
            organ: "liver".into(),
            fold: 0,
            support_sam: f(Backbone::Sam),
            support_dino: f(Backbone::Dino),
            query_sam: f(Backbone::Sam),
            query_dino: f(Backbone::Dino),
            support_mask: mask,
            ground_truth: None,
        }
    }

    #[test]
    fn empty_support_mask_is_reported() {
        let seg = OracleSegmenter::new();
        let err = run_case(&tiny_case(BinaryMask::new(8, 8)), &PipelineConfig::default(), &seg).unwrap_err();
        assert!(matches!(err, Error::EmptySupport));
    }

    #[test]
    fn tiny_case_runs_end_to_end() {
        let mask = BinaryMask::from_fn(8, 8, |_, c| c < 4);
        let mut seg = OracleSegmenter::new();
        let scene = ConfidenceMap::new(8, 8, (0..64).map(|i| if i % 8 < 4 { 1.0f32 } else { 0.0 }).collect()).unwrap();
        seg.insert("c", OracleScene::new(&scene, 0.5));
        let out = run_case(&tiny_case(mask), &PipelineConfig::default(), &seg).unwrap();
        assert!(out.prompts.positives().count() >= 1);
        assert!(!out.final_mask.is_empty());
        // Background confidences are all 0 here, so the Gaussian is degenerate.
        assert!(out.diagnostics.flags.contains(&Flag::DegenerateGaussian));
    }
}
