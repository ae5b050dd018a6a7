use serde::{Deserialize, Serialize};

/// Non-fatal conditions recorded alongside outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Background confidences had zero spread.
    DegenerateGaussian,
    /// Support foreground pixels with all-zero features were skipped.
    ZeroPrototypeVectors,
    PositiveKReduced,
    NegativeKReduced,
    /// The negative confidence band held no pixel.
    NoNegatives,
    /// Two centroids snapped onto the same pixel; the duplicate was dropped.
    SnapCollision,
    /// A pixel was selected both as positive and negative; kept as positive.
    PromptCollision,
    /// Opening emptied the mask; the pass returned its input unchanged.
    RefineSkipped,
    /// Every region vanished at feature resolution.
    RegionsDisqualified,
    /// Prediction and ground truth were both empty; Dice taken as 1.
    BothEmptyDice,
    MissingGroundTruth,
    SingleFold,
}

pub(crate) fn push_unique(flags: &mut Vec<Flag>, flag: Flag) {
    if !flags.contains(&flag) {
        flags.push(flag);
    }
}
