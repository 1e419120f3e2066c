use std::path::Path;

use serde::{Deserialize, Serialize};
use vaps_core::data::DataConfig;
use vaps_core::pipeline::RunConfig;

use crate::error::CliResult;
use crate::manifest::require_file;
use crate::RunOverrides;

/// Contents of the `--config` file. Both sections are optional and fall
/// back to the library defaults field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        require_file(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| vaps_core::Error::io(path, e))?;
        let cfg = serde_json::from_str(&text)
            .map_err(|e| vaps_core::Error::format(path, e.to_string()))?;
        Ok(cfg)
    }
}

impl RunOverrides {
    pub fn apply(&self, run: &mut RunConfig) {
        if let Some(e) = self.epochs {
            run.epochs = e;
        }
        if let Some(s) = self.seed {
            run.seed = s;
        }
        if let Some(lr) = self.lr {
            run.lr = lr;
        }
        if let Some(b) = self.batch_size {
            run.batch_size = b;
        }
        if let Some(m) = self.mode {
            run.mode = m.into();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_fill_in_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"run": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.run.epochs, 3);
        assert_eq!(cfg.run.lr, RunConfig::default().lr);
        assert_eq!(cfg.data, DataConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"dat": {}}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"data": {"sigma": 1}}"#).is_err());
    }
}
