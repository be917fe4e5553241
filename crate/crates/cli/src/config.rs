use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use hintloop_core::pipeline::PipelineConfig;

/// Flags that override fields of the configuration file. They take part in
/// the config hash, so every stage of one run needs the same overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Per-policy precision floor for threshold calibration.
    #[arg(long, global = true)]
    pub min_precision: Option<f64>,
    /// Fraction of a video's frames that may be bridged between segments.
    #[arg(long, global = true)]
    pub gap_fraction: Option<f64>,
    /// Taxonomy JSON file.
    #[arg(long, global = true)]
    pub taxonomy: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, config: &mut PipelineConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(p) = self.min_precision {
            config.min_precision = p;
        }
        if let Some(g) = self.gap_fraction {
            config.gap_fraction = g;
        }
        if let Some(t) = &self.taxonomy {
            config.taxonomy = Some(t.clone());
        }
    }
}

/// Reads a TOML or JSON config (by extension), resolves a relative
/// taxonomy path against the config's directory and applies overrides.
pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<PipelineConfig> {
    let mut config = match path {
        None => PipelineConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut config: PipelineConfig = match path.extension().and_then(|e| e.to_str()) {
                Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
                Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
                _ => bail!("{}: config must be a .toml or .json file", path.display()),
            };
            if let (Some(t), Some(dir)) = (&config.taxonomy, path.parent()) {
                if t.is_relative() {
                    config.taxonomy = Some(dir.join(t));
                }
            }
            config
        }
    };
    overrides.apply(&mut config);
    Ok(config)
}
