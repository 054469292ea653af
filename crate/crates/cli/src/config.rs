//! TOML pipeline configuration. Every section is optional and falls back to the
//! library defaults.

use std::path::{Path, PathBuf};

use crowdmap::fusion::FusionConfig;
use crowdmap::geomodel::GeoModelConfig;
use crowdmap::positioning::KnnConfig;
use crowdmap::similarity::SimilarityConfig;
use crowdmap::simulator::{Extent, RadioParams, WalkParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub traces: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub rfm: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulatorConfig {
    pub seed: u64,
    pub width: f64,
    pub height: f64,
    pub floors: usize,
    pub aps_per_floor: usize,
    pub queries: usize,
    pub radio: RadioParams,
    pub walk: WalkParams,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            width: 100.0,
            height: 50.0,
            floors: 1,
            aps_per_floor: 30,
            queries: 200,
            radio: RadioParams::default(),
            walk: WalkParams::default(),
        }
    }
}

impl SimulatorConfig {
    pub fn extent(&self) -> Extent {
        Extent {
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub simulator: SimulatorConfig,
    pub similarity: SimilarityConfig,
    pub geomodel: GeoModelConfig,
    pub fusion: FusionConfig,
    pub positioning: KnnConfig,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.simulator;
        if !(s.width > 0.0 && s.height > 0.0) {
            return Err(CliError::Config(format!(
                "simulator extent must be positive, got {} x {}",
                s.width, s.height
            )));
        }
        if s.floors == 0 || s.aps_per_floor == 0 {
            return Err(CliError::Config(
                "simulator needs at least one floor and one access point".into(),
            ));
        }
        if self.positioning.k == 0 {
            return Err(CliError::Config("positioning.k must be at least 1".into()));
        }
        let checks = [
            s.walk.validate(),
            self.similarity.validate(),
            self.geomodel.validate(),
            self.fusion.validate(),
        ];
        for c in checks {
            c.map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_toml().as_bytes()))
    }
}
