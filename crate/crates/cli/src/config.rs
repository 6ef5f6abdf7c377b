//! Run configuration: TOML file plus command-line overrides.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use warpfilt::features::FeatureConfig;
use warpfilt::filterbank::ShapeKind;
use warpfilt::metrics::CostParams;
use warpfilt::pitch::PitchConfig;
use warpfilt::scale::ScaleKind;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleArg {
    Mel,
    Speech,
    SpeechPitch,
}

impl ScaleArg {
    pub const ALL: [ScaleArg; 3] = [ScaleArg::Mel, ScaleArg::Speech, ScaleArg::SpeechPitch];

    pub fn kind(self) -> ScaleKind {
        match self {
            ScaleArg::Mel => ScaleKind::Mel,
            ScaleArg::Speech => ScaleKind::Speech,
            ScaleArg::SpeechPitch => ScaleKind::SpeechPitch,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScaleArg::Mel => "mel",
            ScaleArg::Speech => "speech",
            ScaleArg::SpeechPitch => "speech-pitch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeArg {
    Tri,
    Pca,
    Wpca,
    WpcaNorm,
}

impl ShapeArg {
    pub const ALL: [ShapeArg; 4] = [ShapeArg::Tri, ShapeArg::Pca, ShapeArg::Wpca, ShapeArg::WpcaNorm];

    pub fn kind(self) -> ShapeKind {
        match self {
            ShapeArg::Tri => ShapeKind::Triangular,
            ShapeArg::Pca => ShapeKind::Pca,
            ShapeArg::Wpca => ShapeKind::WindowedPca,
            ShapeArg::WpcaNorm => ShapeKind::WindowedPcaNormalized,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeArg::Tri => "tri",
            ShapeArg::Pca => "pca",
            ShapeArg::Wpca => "wpca",
            ShapeArg::WpcaNorm => "wpca-norm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CostPreset {
    NistSre,
    Voxceleb,
}

impl CostPreset {
    pub fn params(self) -> CostParams {
        match self {
            CostPreset::NistSre => CostParams::NIST_SRE,
            CostPreset::Voxceleb => CostParams::VOXCELEB,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CostPreset::NistSre => "nist-sre",
            CostPreset::Voxceleb => "voxceleb",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UbmSection {
    pub n_components: usize,
    pub iterations: usize,
}

impl Default for UbmSection {
    fn default() -> Self {
        Self {
            n_components: 64,
            iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub scale: ScaleArg,
    pub shape: ShapeArg,
    pub subsample_fraction: f64,
    pub relevance: f64,
    pub cost_preset: CostPreset,
    pub features: FeatureConfig,
    pub pitch: PitchConfig,
    pub ubm: UbmSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: ScaleArg::SpeechPitch,
            shape: ShapeArg::WpcaNorm,
            subsample_fraction: 1.0,
            relevance: warpfilt::gmm::DEFAULT_RELEVANCE,
            cost_preset: CostPreset::NistSre,
            features: FeatureConfig::default(),
            pitch: PitchConfig::default(),
            ubm: UbmSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let cfg = match path {
            None => Self::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.features
            .validate()
            .map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(CliError::Usage(format!(
                "subsample fraction must be in (0, 1], got {}",
                self.subsample_fraction
            )));
        }
        if !(self.relevance >= 0.0) {
            return Err(CliError::Usage(format!("relevance must be >= 0, got {}", self.relevance)));
        }
        let p = &self.pitch;
        if !(p.f_min > 0.0 && p.f_max > p.f_min) {
            return Err(CliError::Usage(format!("pitch range {}..{} Hz is empty", p.f_min, p.f_max)));
        }
        if self.ubm.n_components == 0 {
            return Err(CliError::Usage("ubm.n_components must be >= 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.features.frame_ms, 20.0);
        assert_eq!(c.features.hop_ms, 10.0);
        assert_eq!(c.features.n_filters, 20);
        assert_eq!(c.features.n_ceps, 19);
        assert_eq!(c.relevance, 14.0);
        assert_eq!(c.ubm.iterations, 10);
    }

    #[test]
    fn parses_partial_toml_and_rejects_unknown_keys() {
        let c: RunConfig = toml::from_str("seed = 7\nscale = \"mel\"\n[features]\nrasta = false\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.scale, ScaleArg::Mel);
        assert!(!c.features.rasta);
        assert_eq!(c.features.n_ceps, 19);
        assert!(toml::from_str::<RunConfig>("sede = 7\n").is_err());
        assert!(toml::from_str::<RunConfig>("[features]\nwindow = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("shape = \"gaussian\"\n").is_err());
    }
}
