pub mod cmsm;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flags;
pub mod kmeans;
pub mod morph;
pub mod nrm;
pub mod pipeline;
pub mod psm;
pub mod rng;
pub mod scalar;
pub mod segmenter;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureMap32 = data::FeatureMap<f32>;
pub type FeatureMap64 = data::FeatureMap<f64>;
pub type ConfidenceMap32 = data::ConfidenceMap<f32>;
pub type ConfidenceMap64 = data::ConfidenceMap<f64>;
pub type CaseInputs32 = data::CaseInputs<f32>;
pub type CaseInputs64 = data::CaseInputs<f64>;
pub type Synergy32 = cmsm::Synergy<f32>;
pub type Synergy64 = cmsm::Synergy<f64>;
pub type CaseOutcome32 = pipeline::CaseOutcome<f32>;
pub type CaseOutcome64 = pipeline::CaseOutcome<f64>;
