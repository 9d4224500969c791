//! Flat TOML run configuration with command-line overrides.

use std::path::Path;

use kagrmn_core::{ModelConfig, Variant};

use crate::error::{read_to_string, write_atomic, Error, Result};

pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ModelConfig> {
    parse_config(&read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn to_toml(cfg: &ModelConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

pub fn save_config(path: &Path, cfg: &ModelConfig) -> Result<()> {
    write_atomic(path, to_toml(cfg)?.as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub time_steps: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(t) = self.time_steps {
            cfg.time_steps = t;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.learning_rate {
            cfg.learning_rate = lr;
        }
    }
}

/// File (or defaults) with overrides applied, validated.
pub fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> Result<ModelConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => ModelConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}
