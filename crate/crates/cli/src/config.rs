use std::path::Path;

use climadapt_core::adaptation::ZoneThresholds;
use climadapt_core::flowrecon::WakeConfig;
use climadapt_core::forecast::TrainConfig;
use climadapt_core::fusion::TrainOptions;
use climadapt_core::indicators::IndexConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    pub degree: usize,
    pub lstm: TrainConfig,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            degree: 2,
            lstm: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FusionSection {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            hidden_layers: vec![4, 2],
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            seed: 0,
        }
    }
}

impl FusionSection {
    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub index: IndexConfig,
    pub calibration: ZoneThresholds,
    pub forecast: ForecastSection,
    pub flow: WakeConfig,
    pub fusion: FusionSection,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        let mut cfg = match path {
            None => PipelineConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
        };
        if let Some(s) = seed {
            cfg.flow.seed = s;
            cfg.forecast.lstm.seed = s;
            cfg.fusion.seed = s;
        }
        cfg.index.validate()?;
        cfg.calibration.validate()?;
        cfg.flow.validate()?;
        Ok(cfg)
    }
}
