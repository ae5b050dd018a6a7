//! Noise-aware refinement: open the coarse mask, score its connected regions
//! against the support prototypes, keep the best one and re-prompt with it.

use serde::{Deserialize, Serialize};

use crate::cmsm::{FeaturePair, Synergy};
use crate::data::{downsample_mask, BinaryMask};
use crate::error::{Error, Result};
use crate::flags::{push_unique, Flag};
use crate::morph::{connected_components, open_mask, MorphConfig, Region};
use crate::psm::PromptSet;
use crate::scalar::Scalar;
use crate::segmenter::{SegmentRequest, Segmenter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub enabled: bool,
    /// Pass count; every pass but the last re-prompts the segmenter.
    pub passes: usize,
    pub morph: MorphConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            passes: 2,
            morph: MorphConfig::default(),
        }
    }
}

/// Mean fused confidence over a region, evaluated on the feature grid.
///
/// Returns `-inf` when the majority-downsampled region is empty.
pub fn score_region<T: Scalar>(region: &BinaryMask, query: FeaturePair<'_, T>, synergy: &Synergy<T>) -> Result<T> {
    let small = downsample_mask(region, query.sam.height(), query.sam.width())?;
    let mut sum = T::zero();
    let mut n = 0usize;
    for (r, c) in small.foreground() {
        sum = sum + synergy.fused_score(query.sam.pixel(r, c), query.dino.pixel(r, c));
        n += 1;
    }
    Ok(if n == 0 {
        T::neg_infinity()
    } else {
        sum / T::of(n as f64)
    })
}

pub struct RefineContext<'a, T> {
    pub synergy: &'a Synergy<T>,
    pub query: FeaturePair<'a, T>,
    pub prompts: &'a PromptSet,
    pub image_ref: &'a str,
    pub segmenter: &'a dyn Segmenter,
    pub config: RefineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassReport {
    pub pass: usize,
    pub region_scores: Vec<f64>,
    pub chosen: Option<usize>,
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub mask: BinaryMask,
    pub passes: Vec<PassReport>,
    pub flags: Vec<Flag>,
}

/// Opens `mask`, scores each component and returns the best one (ties to the
/// lower id), or `None` if opening left nothing.
pub fn best_region<T: Scalar>(
    mask: &BinaryMask,
    query: FeaturePair<'_, T>,
    synergy: &Synergy<T>,
    morph: &MorphConfig,
) -> Result<Option<(Region, Vec<Region>)>> {
    let opened = open_mask(mask, morph);
    if opened.is_empty() {
        return Ok(None);
    }
    let mut regions = connected_components(&opened);
    for region in &mut regions {
        region.score = score_region(&region.mask, query, synergy)?.as_f64();
    }
    let best = regions
        .iter()
        .fold(0, |best, r| if r.score > regions[best].score { r.id } else { best });
    Ok(Some((regions[best].clone(), regions)))
}

pub fn refine<T: Scalar>(coarse: &BinaryMask, ctx: &RefineContext<'_, T>) -> Result<Refined> {
    let mut current = coarse.clone();
    let mut passes = Vec::new();
    let mut flags = Vec::new();
    for pass in 1..=ctx.config.passes {
        let Some((best, regions)) = best_region(&current, ctx.query, ctx.synergy, &ctx.config.morph)? else {
            push_unique(&mut flags, Flag::RefineSkipped);
            passes.push(PassReport {
                pass,
                region_scores: Vec::new(),
                chosen: None,
                skipped: true,
            });
            return Ok(Refined {
                mask: current,
                passes,
                flags,
            });
        };
        if regions.iter().all(|r| r.score == f64::NEG_INFINITY) {
            push_unique(&mut flags, Flag::RegionsDisqualified);
        }
        passes.push(PassReport {
            pass,
            region_scores: regions.iter().map(|r| r.score).collect(),
            chosen: Some(best.id),
            skipped: false,
        });
        current = if pass < ctx.config.passes {
            let req =
                SegmentRequest::new(ctx.image_ref, coarse.dims(), ctx.prompts.clone()).with_mask_prompt(best.mask);
            ctx.segmenter.segment(&req).map_err(|e| Error::Refine {
                pass,
                source: Box::new(e),
            })?
        } else {
            best.mask
        };
    }
    Ok(Refined {
        mask: current,
        passes,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmsm::{build_synergy, FusionWeights};
    use crate::data::{Backbone, ConfidenceMap, FeatureMap};
    use crate::psm::{Label, PointPrompt};
    use crate::segmenter::{OracleScene, OracleSegmenter};

    /// 4x4 feature grid, 2 channels. Column 0..2 of rows 0..2 carries the
    /// prototype direction (1, 0); everything else is (0, 1).
    fn features(b: Backbone) -> FeatureMap<f64> {
        let data = (0..16)
            .flat_map(|i| if i / 4 < 2 && i % 4 < 2 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        FeatureMap::new(4, 4, 2, data, b).unwrap()
    }

    fn synergy(f_sam: &FeatureMap<f64>, f_dino: &FeatureMap<f64>) -> Synergy<f64> {
        let mask = BinaryMask::from_fn(4, 4, |r, c| r < 2 && c < 2);
        build_synergy(
            FeaturePair {
                sam: f_sam,
                dino: f_dino,
            },
            FeaturePair {
                sam: f_sam,
                dino: f_dino,
            },
            &mask,
            &FusionWeights::default(),
        )
        .unwrap()
    }

    #[test]
    fn region_scores() {
        let (s, d) = (features(Backbone::Sam), features(Backbone::Dino));
        let syn = synergy(&s, &d);
        let q = FeaturePair { sam: &s, dino: &d };
        // Image grid 16x16 = 4x per feature cell.
        let on_proto = BinaryMask::from_fn(16, 16, |r, c| r < 8 && c < 8);
        assert!((score_region(&on_proto, q, &syn).unwrap() - 1.0).abs() < 1e-15);
        let off_proto = BinaryMask::from_fn(16, 16, |r, c| r >= 12 && c >= 12);
        assert!(score_region(&off_proto, q, &syn).unwrap().abs() < 1e-15);
        let tiny = BinaryMask::from_fn(16, 16, |r, c| r == 0 && c == 0);
        assert_eq!(score_region(&tiny, q, &syn).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn mean_of_fused_values() {
        // Three cells with SAM=DINO cosine s give fused 0.8s^2 + 0.2s; pick s so the
        // fused values are 0.2, 0.4 and 0.9 and check the mean is 0.5.
        let solve = |t: f64| (-0.2 + (0.04f64 + 3.2 * t).sqrt()) / 1.6;
        let cells: Vec<[f64; 2]> = [0.2, 0.4, 0.9]
            .iter()
            .map(|&t| {
                let s = solve(t);
                [s, (1.0 - s * s).sqrt()]
            })
            .collect();
        // Support: prototype (1, 0) at pixel 0, background (0, 1) elsewhere.
        let data = (0..6)
            .flat_map(|i| if i == 0 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        let support = FeatureMap::new(3, 2, 2, data, Backbone::Sam).unwrap();
        let mut q = vec![0.0; 12];
        for (k, v) in cells.iter().enumerate() {
            q[k * 4] = v[0];
            q[k * 4 + 1] = v[1];
        }
        let query = FeatureMap::new(3, 2, 2, q, Backbone::Sam).unwrap();
        let mask = BinaryMask::from_fn(3, 2, |r, c| r == 0 && c == 0);
        let pair = FeaturePair {
            sam: &support,
            dino: &support,
        };
        let qpair = FeaturePair {
            sam: &query,
            dino: &query,
        };
        let syn = build_synergy(pair, qpair, &mask, &FusionWeights::default()).unwrap();
        let region = BinaryMask::from_fn(3, 2, |_, c| c == 0);
        assert!((score_region(&region, qpair, &syn).unwrap() - 0.5).abs() < 1e-12);
    }

    fn scene_with_two_objects() -> OracleScene {
        // 16x16 image: object A over the prototype block, object B bottom-right.
        let data = (0..256)
            .map(|i| {
                let (r, c) = (i / 16, i % 16);
                if (r < 8 && c < 8) || (r >= 12 && c >= 12) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        OracleScene::new(&ConfidenceMap::new(16, 16, data).unwrap(), 0.5)
    }

    #[test]
    fn refine_drops_low_scoring_region() {
        let (s, d) = (features(Backbone::Sam), features(Backbone::Dino));
        let syn = synergy(&s, &d);
        let mut seg = OracleSegmenter::new();
        seg.insert("q", scene_with_two_objects());
        let prompts = PromptSet {
            points: vec![
                PointPrompt {
                    x: 2,
                    y: 2,
                    label: Label::Positive,
                },
                PointPrompt {
                    x: 14,
                    y: 14,
                    label: Label::Positive,
                },
            ],
            flags: vec![],
        };
        let coarse = seg
            .segment(&SegmentRequest::new("q", (16, 16), prompts.clone()))
            .unwrap();
        assert_eq!(connected_components(&coarse).len(), 2);
        let ctx = RefineContext {
            synergy: &syn,
            query: FeaturePair { sam: &s, dino: &d },
            prompts: &prompts,
            image_ref: "q",
            segmenter: &seg,
            config: RefineConfig::default(),
        };
        let out = refine(&coarse, &ctx).unwrap();
        let a = open_mask(
            &BinaryMask::from_fn(16, 16, |r, c| r < 8 && c < 8),
            &MorphConfig::default(),
        );
        assert_eq!(out.mask, a);
        assert_eq!(out.passes.len(), 2);
        assert_eq!(out.passes[0].chosen, Some(0));
        assert!(out.passes[0].region_scores[0] > out.passes[0].region_scores[1]);
    }

    #[test]
    fn empty_coarse_mask_is_returned_unchanged() {
        let (s, d) = (features(Backbone::Sam), features(Backbone::Dino));
        let syn = synergy(&s, &d);
        let seg = OracleSegmenter::new();
        let prompts = PromptSet::default();
        let ctx = RefineContext {
            synergy: &syn,
            query: FeaturePair { sam: &s, dino: &d },
            prompts: &prompts,
            image_ref: "q",
            segmenter: &seg,
            config: RefineConfig::default(),
        };
        let out = refine(&BinaryMask::new(16, 16), &ctx).unwrap();
        assert!(out.mask.is_empty());
        assert_eq!(out.flags, vec![Flag::RefineSkipped]);
    }

    #[test]
    fn segmenter_failure_carries_pass_index() {
        let (s, d) = (features(Backbone::Sam), features(Backbone::Dino));
        let syn = synergy(&s, &d);
        let seg = OracleSegmenter::new();
        let prompts = PromptSet::default();
        let ctx = RefineContext {
            synergy: &syn,
            query: FeaturePair { sam: &s, dino: &d },
            prompts: &prompts,
            image_ref: "missing",
            segmenter: &seg,
            config: RefineConfig::default(),
        };
        let coarse = BinaryMask::from_fn(16, 16, |r, c| r < 8 && c < 8);
        match refine(&coarse, &ctx) {
            Err(Error::Refine { pass: 1, source }) => assert!(matches!(*source, Error::Backend(_))),
            other => panic!("unexpected {other:?}"),
        }
    }
}
