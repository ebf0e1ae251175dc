use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::CliError;
use crate::learning::PpoConfig;
use crate::ranker::RankerKind;

/// TOML run configuration. Every field is optional; flags override it and
/// built-in defaults fill whatever neither sets.
///
/// ```toml
/// data = "gallery.json"
/// seed = 7
/// ranker = "sscan"
///
/// [ppo]
/// total_epochs = 200
/// alpha = 1000.0
/// ```
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub policy: Option<PathBuf>,
    pub ranker: Option<RankerKind>,
    pub seed: Option<u64>,
    pub ppo: Option<PpoConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Relative paths inside the file are taken relative to the file itself.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data, &mut config.policy].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}
