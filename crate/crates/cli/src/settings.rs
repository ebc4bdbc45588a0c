use std::path::Path;

use anyhow::{Context, Result};
use derevrb::config::ExperimentConfig;

/// Config from `path` (flag or environment), or the defaults.
pub fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let mut c = ExperimentConfig::load(p)
                .with_context(|| format!("loading config {}", p.display()))?;
            if let (Some(model), Some(dir)) = (&mut c.prior.model, p.parent()) {
                if model.is_relative() {
                    *model = dir.join(&*model);
                }
            }
            log::info!("config {}", p.display());
            Ok(c)
        }
        None => Ok(ExperimentConfig::default()),
    }
}
