use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmsm::FusionWeights;
use crate::error::{Error, Result};
use crate::nrm::RefineConfig;
use crate::psm::SelectionConfig;

/// Named `(alpha, beta)` band settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Band `[mu, mu + 1.5 sigma]`.
    Chaos,
    /// Band `[mu - sigma, mu + 0.5 sigma]`.
    Synapse,
    Custom,
}

impl Preset {
    pub fn band(self) -> Option<(f64, f64)> {
        match self {
            Preset::Chaos => Some((0.0, -1.5)),
            Preset::Synapse => Some((1.0, -0.5)),
            Preset::Custom => None,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chaos" => Ok(Preset::Chaos),
            "synapse" => Ok(Preset::Synapse),
            "custom" => Ok(Preset::Custom),
            _ => Err(Error::Config(format!(
                "unknown preset {s:?} (expected chaos, synapse or custom)"
            ))),
        }
    }
}

/// Which grid prompts are selected on before being mapped to image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptGrid {
    /// The encoder grid the Gaussian was fitted on.
    Feature,
    /// The synergy map bilinearly upsampled to the image grid.
    Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub fusion: FusionWeights,
    pub selection: SelectionConfig,
    pub refine: RefineConfig,
    pub prompt_grid: PromptGrid,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Chaos,
            fusion: FusionWeights::default(),
            selection: SelectionConfig::default(),
            refine: RefineConfig::default(),
            prompt_grid: PromptGrid::Feature,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Switches preset and overwrites `alpha`/`beta` with its band.
    pub fn with_preset(mut self, preset: Preset) -> Self {
        self.preset = preset;
        if let Some((alpha, beta)) = preset.band() {
            self.selection.alpha = alpha;
            self.selection.beta = beta;
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.selection.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        self.selection.validate()?;
        if let Some((alpha, beta)) = self.preset.band() {
            if (alpha, beta) != (self.selection.alpha, self.selection.beta) {
                return Err(Error::Config(format!(
                    "preset {:?} implies alpha={alpha}, beta={beta}; use preset \"custom\" to override",
                    self.preset
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_set_the_band() {
        let c = PipelineConfig::default().with_preset(Preset::Synapse);
        assert_eq!((c.selection.alpha, c.selection.beta), (1.0, -0.5));
        assert!(c.validate().is_ok());
        let mut bad = c;
        bad.selection.alpha = 3.0;
        assert!(bad.validate().is_err());
        bad.preset = Preset::Custom;
        assert!(bad.validate().is_ok());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: PipelineConfig = serde_json::from_str(r#"{"selection":{"k_pos":2}}"#).unwrap();
        assert_eq!(c.selection.k_pos, 2);
        assert_eq!(c.selection.k_neg, 4);
        assert_eq!(c.fusion, FusionWeights::default());
        assert_eq!(c.refine.passes, 2);
    }
}
