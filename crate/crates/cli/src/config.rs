//! Settings resolution: flags, then environment, then the config file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use ci_entail::evaluation::Provenance;
use ci_entail::gateway::{
    ChatProvider, Gateway, LiveConfig, LiveProvider, ResponseCache, ScriptedProvider,
    TEMPLATE_VERSION,
};

pub const API_KEY_ENV: &str = "CI_ENTAIL_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Live,
    Scripted,
}

/// Config file contents. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub provider: Option<ProviderMode>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub retries: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub fixture: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub timeout_secs: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Global options after flags and environment were applied by clap.
#[derive(Debug, Clone, Default)]
pub struct FlagConfig {
    pub seed: Option<u64>,
    pub provider: Option<ProviderMode>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub retries: Option<usize>,
    pub max_in_flight: Option<usize>,
    pub fixture: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
}

/// Fully resolved settings; recorded in every run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub seed: u64,
    pub provider: ProviderMode,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub retries: usize,
    pub max_in_flight: usize,
    pub fixture: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub timeout_secs: u64,
}

impl Settings {
    pub fn resolve(flags: FlagConfig, file: FileConfig) -> Self {
        Settings {
            seed: flags.seed.or(file.seed).unwrap_or(0),
            provider: flags
                .provider
                .or(file.provider)
                .unwrap_or(ProviderMode::Scripted),
            cache_dir: flags.cache_dir.or(file.cache_dir),
            out_dir: flags
                .out_dir
                .or(file.out_dir)
                .unwrap_or_else(|| PathBuf::from("out")),
            retries: flags.retries.or(file.retries).unwrap_or(3),
            max_in_flight: flags.max_in_flight.or(file.max_in_flight).unwrap_or(4),
            fixture: flags.fixture.or(file.fixture),
            endpoint: flags.endpoint.or(file.endpoint),
            model: flags.model.or(file.model),
            temperature: file.temperature.unwrap_or(0.0),
            timeout_secs: file.timeout_secs.unwrap_or(120),
        }
    }

    /// Builds the gateway and the provenance stamp for reports.
    pub fn gateway(&self) -> Result<(Gateway, Provenance)> {
        let (provider, provenance): (Arc<dyn ChatProvider>, Provenance) = match self.provider {
            ProviderMode::Scripted => {
                let Some(path) = &self.fixture else {
                    bail!("--provider scripted needs --fixture (or CI_ENTAIL_FIXTURE / `fixture` in the config)");
                };
                let p = ScriptedProvider::load(path)?;
                let provenance = Provenance {
                    model_id: p.model_id().to_string(),
                    deterministic: true,
                    fixture_hash: Some(p.fixture_hash().to_string()),
                    template_version: TEMPLATE_VERSION.into(),
                };
                (Arc::new(p), provenance)
            }
            ProviderMode::Live => {
                let (Some(endpoint), Some(model)) = (&self.endpoint, &self.model) else {
                    bail!("--provider live needs --endpoint and --model");
                };
                let p = LiveProvider::new(LiveConfig {
                    endpoint: endpoint.clone(),
                    model: model.clone(),
                    api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
                    temperature: Some(self.temperature),
                    timeout_secs: self.timeout_secs,
                });
                let provenance = Provenance {
                    model_id: model.clone(),
                    deterministic: false,
                    fixture_hash: None,
                    template_version: TEMPLATE_VERSION.into(),
                };
                (Arc::new(p), provenance)
            }
        };
        let mut gateway = Gateway::new(provider).with_max_in_flight(self.max_in_flight);
        if let Some(dir) = &self.cache_dir {
            gateway = gateway.with_cache(
                ResponseCache::open(dir).with_context(|| format!("cache dir {}", dir.display()))?,
            );
        }
        Ok((gateway, provenance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_and_defaults_fill_gaps() {
        let file = FileConfig {
            seed: Some(9),
            out_dir: Some("from-file".into()),
            retries: Some(5),
            ..Default::default()
        };
        let flags = FlagConfig {
            seed: Some(1),
            ..Default::default()
        };
        let s = Settings::resolve(flags, file);
        assert_eq!(s.seed, 1);
        assert_eq!(s.out_dir, PathBuf::from("from-file"));
        assert_eq!(s.retries, 5);
        assert_eq!(s.provider, ProviderMode::Scripted);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("sede = 3").is_err());
    }
}
