//! Run configuration file (TOML).
//!
//! ```toml
//! corpus = "corpus"            # relative paths resolve against this file
//! index = "index"
//! workers = 4
//! seed = 42
//!
//! [pipeline]                   # max_hits, refine_threshold, rerank_top_n, ...
//! [synthesis]                  # threshold, first_temperature, retry_temperature
//! [context]                    # strategy and per-mode token budgets
//!
//! [models.generator]
//! model_id = "gen"
//! kind = "scripted"            # scripted | replay | remote-http
//! script = "scripts/gen.toml"
//!
//! [[models.candidates]]
//! ...
//! [[fallback]]
//! name = "pubmed-web"
//! kind = "fixture"
//! dir = "fallback/pubmed"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::Strategy;
use crate::error::{Error, Result};
use crate::fallback::{FallbackChain, FixtureSearcher, RemoteSearcher, SourceSearcher, DEFAULT_PER_SOURCE_CAP};
use crate::llm::{
    BackendKind, Binding, ChatBackend, HttpAdapter, RemoteBackend, ReplayBackend, ScriptRule, ScriptedBackend,
};
use crate::rerank::{DeterministicEmbedder, Embedder, RemoteEmbedder, DETERMINISTIC_DIMENSION};
use crate::retrieval::PipelineConfig;
use crate::synthesis::SynthesisConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_retrieved_budget")]
    pub retrieved_budget: usize,
    #[serde(default = "default_snippets_budget")]
    pub snippets_budget: usize,
    #[serde(default = "default_abstracts_budget")]
    pub abstracts_budget: usize,
}

fn default_retrieved_budget() -> usize {
    12288
}
fn default_snippets_budget() -> usize {
    4096
}
fn default_abstracts_budget() -> usize {
    12288
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            strategy: Strategy::default(),
            retrieved_budget: default_retrieved_budget(),
            snippets_budget: default_snippets_budget(),
            abstracts_budget: default_abstracts_budget(),
        }
    }
}

/// One model binding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub model_id: String,
    pub kind: BackendKind,
    /// Scripted: TOML script file.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Scripted: rules tried after those of `script`.
    #[serde(default, skip_serializing)]
    pub rules: Vec<ScriptRule>,
    /// Scripted: response when no rule matches.
    #[serde(default)]
    pub default: Option<String>,
    /// Replay: transcript file.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    /// Remote: HTTP adapter.
    #[serde(default)]
    pub adapter: Option<HttpAdapter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub generator: ModelSpec,
    /// Defaults to the generator.
    #[serde(default)]
    pub refiner: Option<ModelSpec>,
    pub candidates: Vec<ModelSpec>,
    pub synthesizer: ModelSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Deterministic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderConfig {
    #[serde(default)]
    pub kind: EmbedderKind,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub adapter: Option<HttpAdapter>,
}

fn default_dimension() -> usize {
    DETERMINISTIC_DIMENSION
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig { kind: EmbedderKind::Deterministic, dimension: DETERMINISTIC_DIMENSION, adapter: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FallbackKind {
    Fixture,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FallbackSourceConfig {
    pub name: String,
    pub kind: FallbackKind,
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub adapter: Option<HttpAdapter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub index: Option<PathBuf>,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub context: ContextConfig,
    pub models: ModelsConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub fallback: Vec<FallbackSourceConfig>,
    #[serde(default = "default_cap")]
    pub fallback_per_source_cap: usize,
}

fn default_seed() -> u64 {
    crate::context::KMEANS_SEED
}
fn default_workers() -> usize {
    4
}
fn default_cap() -> usize {
    DEFAULT_PER_SOURCE_CAP
}

/// A parsed config together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// SHA-256 of the config file bytes.
    pub digest: String,
    pub base_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::Config(format!("{}: not valid UTF-8", path.display())))?;
        let config = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, digest: sha256_hex(&bytes), base_dir })
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate().map_err(Error::Config)?;
        self.synthesis.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        if self.models.candidates.is_empty() {
            return Err(Error::Config("models.candidates needs at least one binding".into()));
        }
        let c = &self.context;
        if c.retrieved_budget == 0 || c.snippets_budget == 0 || c.abstracts_budget == 0 {
            return Err(Error::Config("context budgets must be positive".into()));
        }
        if self.fallback_per_source_cap == 0 {
            return Err(Error::Config("fallback_per_source_cap must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Instantiate a binding. `replay` replaces whatever backend the spec names
/// with a shared replay backend.
pub fn build_binding(spec: &ModelSpec, base: &Path, replay: Option<&Arc<ReplayBackend>>) -> Result<Binding> {
    if let Some(r) = replay {
        return Ok(Binding::new(spec.model_id.clone(), r.clone() as Arc<dyn ChatBackend>));
    }
    let what = |msg: &str| Error::Config(format!("model {}: {msg}", spec.model_id));
    let backend: Arc<dyn ChatBackend> = match spec.kind {
        BackendKind::Scripted => {
            let mut b = match &spec.script {
                Some(p) => ScriptedBackend::from_path(&resolve(base, p))?,
                None => ScriptedBackend::new(),
            };
            for rule in &spec.rules {
                b = b.with_rule(rule.clone());
            }
            if let Some(d) = &spec.default {
                b = b.with_default(d.clone());
            }
            Arc::new(b)
        }
        BackendKind::Replay => {
            let p = spec.transcript.as_ref().ok_or_else(|| what("replay kind needs `transcript`"))?;
            Arc::new(ReplayBackend::from_path(&resolve(base, p))?)
        }
        BackendKind::RemoteHttp => {
            let a = spec.adapter.clone().ok_or_else(|| what("remote-http kind needs `adapter`"))?;
            Arc::new(RemoteBackend::new(a)?)
        }
    };
    Ok(Binding::new(spec.model_id.clone(), backend))
}

pub fn build_embedder(cfg: &EmbedderConfig) -> Result<Arc<dyn Embedder>> {
    Ok(match cfg.kind {
        EmbedderKind::Deterministic => Arc::new(DeterministicEmbedder::new(cfg.dimension)?),
        EmbedderKind::Remote => {
            let a = cfg.adapter.clone().ok_or_else(|| Error::Config("remote embedder needs `adapter`".into()))?;
            Arc::new(RemoteEmbedder::new(a, cfg.dimension)?)
        }
    })
}

pub fn build_fallback(cfg: &RunConfig, base: &Path) -> Result<Option<FallbackChain>> {
    if cfg.fallback.is_empty() {
        return Ok(None);
    }
    let mut sources: Vec<Arc<dyn SourceSearcher>> = Vec::new();
    for s in &cfg.fallback {
        sources.push(match s.kind {
            FallbackKind::Fixture => {
                let dir = s.dir.as_ref().ok_or_else(|| Error::Config(format!("fallback {}: needs `dir`", s.name)))?;
                let dir = resolve(base, dir);
                if !dir.is_dir() {
                    return Err(Error::Config(format!("fallback {}: {} is not a directory", s.name, dir.display())));
                }
                Arc::new(FixtureSearcher::new(s.name.clone(), dir))
            }
            FallbackKind::Remote => {
                let a =
                    s.adapter.clone().ok_or_else(|| Error::Config(format!("fallback {}: needs `adapter`", s.name)))?;
                Arc::new(RemoteSearcher::new(s.name.clone(), a)?)
            }
        });
    }
    Ok(Some(FallbackChain::new(sources, cfg.fallback_per_source_cap)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [models.generator]
        model_id = "gen"
        kind = "scripted"
        default = "aspirin"

        [[models.candidates]]
        model_id = "a"
        kind = "scripted"
        default = "yes"

        [models.synthesizer]
        model_id = "s"
        kind = "scripted"
        [[models.synthesizer.rules]]
        contains = ["Task: synthesis"]
        response = "x"
    "#;

    #[test]
    fn defaults_carry_constants() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.pipeline.max_hits, 10_000);
        assert_eq!(cfg.pipeline.refine_threshold, 5);
        assert_eq!(cfg.pipeline.rerank_top_n, 300);
        assert_eq!(cfg.synthesis.threshold, 0.5);
        assert_eq!((cfg.synthesis.first_temperature, cfg.synthesis.retry_temperature), (0.1, 0.0));
        assert_eq!(cfg.workers, 4);
        assert_eq!(cfg.models.synthesizer.rules.len(), 1);
    }

    #[test]
    fn rejects_bad_values() {
        let bad = format!("workers = 0\n{MINIMAL}");
        assert!(RunConfig::from_toml_str(&bad).is_err());
        let bad = format!("[synthesis]\nretry_temperature = 0.5\n{MINIMAL}");
        assert!(RunConfig::from_toml_str(&bad).is_err());
        assert!(RunConfig::from_toml_str("unknown = 1").is_err());
    }

    #[test]
    fn replay_kind_requires_transcript() {
        let spec = ModelSpec {
            model_id: "m".into(),
            kind: BackendKind::Replay,
            script: None,
            rules: Vec::new(),
            default: None,
            transcript: None,
            adapter: None,
        };
        assert!(build_binding(&spec, Path::new("."), None).is_err());
    }
}
