//! TOML run configuration. Precedence: command-line flag, then this file,
//! then built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use supportsim_core::dialogue::GenerationConfig;
use supportsim_core::gateway::GatewayConfig;
use supportsim_core::persona::RealizeOptions;
use supportsim_core::qc::QcConfig;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// OpenAI-compatible HTTP endpoint from `[gateway]`.
    Http,
    /// Answers from a recorded transcript; no network.
    Replay,
    /// Built-in deterministic stand-in model; no network.
    Simulated,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub min_words: Option<usize>,
    pub block: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsSection {
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub min_turns: Option<usize>,
    pub cors_origin: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub quiet: Option<bool>,
    pub force: Option<bool>,
    pub parallel: Option<usize>,
    pub backend: Option<Backend>,
    pub transcript: Option<PathBuf>,
    pub ingest: IngestSection,
    pub gateway: GatewayConfig,
    pub personas: RealizeOptions,
    pub generation: GenerationConfig,
    /// Defaults to the limits implied by `[generation]`.
    pub qc: Option<QcConfig>,
    pub analytics: AnalyticsSection,
    pub serve: ServeSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let raw = fs::read_to_string(path).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&raw).map_err(|e| UsageError(format!("config {}: {e}", path.display())))?;
        // Paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(t) = &cfg.transcript {
            cfg.transcript = Some(base.join(t));
        }
        if let Some(c) = &cfg.gateway.cache_dir {
            cfg.gateway.cache_dir = Some(base.join(c));
        }
        Ok(cfg)
    }

    pub fn qc(&self) -> QcConfig {
        self.qc.clone().unwrap_or_else(|| QcConfig::from(&self.generation))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_default_independently() {
        let cfg: FileConfig = toml::from_str("seed = 3\n[generation]\ntarget_turn_pairs = 10\n").unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.generation.target_turn_pairs, 10);
        assert_eq!(cfg.generation.max_supporter_words, GenerationConfig::default().max_supporter_words);
        assert_eq!(cfg.qc().max_supporter_words, 40);
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        assert!(toml::from_str::<FileConfig>("seeed = 3\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "backend = \"replay\"\ntranscript = \"t.jsonl\"\n").unwrap();
        let cfg = FileConfig::load(&p).unwrap();
        assert_eq!(cfg.backend, Some(Backend::Replay));
        assert_eq!(cfg.transcript.unwrap(), dir.path().join("t.jsonl"));
    }
}
