//! Declarative run configuration (TOML). Every field has a default and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::CorruptionSpec;
use crate::error::{Error, Result};
use crate::network::HyperParams;
use crate::predictor::PredictConfig;
use crate::scene::{DEFAULT_FRAME_RATE_HZ, DEFAULT_T_OBS, DEFAULT_T_PRED};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub frame_rate_hz: f64,
    /// Step between consecutive window end frames.
    pub stride: usize,
    /// Fraction of observed entries dropped when corrupting.
    pub drop_fraction: f64,
    pub corruption_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
            stride: 1,
            drop_fraction: CorruptionSpec::default().drop_fraction,
            corruption_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: HyperParams,
    pub predict: PredictConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Seeds parameter initialization.
    pub init_seed: u64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: HyperParams {
                t_obs: DEFAULT_T_OBS,
                t_pred: DEFAULT_T_PRED,
                ..HyperParams::default()
            },
            predict: PredictConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            init_seed: 0,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(origin, line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let p = &self.predict;
        if !(p.od >= 0.0 && p.fd >= 0.0 && p.graph.cluster_eps >= 0.0) {
            return Err(Error::InvalidArgument("od, fd and ad must be nonnegative".into()));
        }
        if !(self.data.frame_rate_hz > 0.0) || self.data.stride == 0 {
            return Err(Error::InvalidArgument("frame rate and stride must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.data.drop_fraction) {
            return Err(Error::InvalidArgument("drop fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
