//! Engine configuration file.
//!
//! A single TOML document. Relative paths resolve against the directory of
//! the file. Credentials never live in the file: components name the
//! environment variable holding their token instead.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::AnswerGenerator;
use crate::augment::{AugmentError, Augmenter, ProviderConfig, ProviderKind};
use crate::backend::{HttpBackend, LlmBackend, MockBackend};
use crate::encoding::{EncodeError, Encoder, ExternalEncoder, HashingEmbedder, DEFAULT_DIM};
use crate::fusion::{FusionError, FusionWeights, RerankStrategy};
use crate::location::Bm25Params;
use crate::memory::{MemoryStore, StoreError};
use crate::retrieval::{Engine, EngineSettings, RetrievalError};
use crate::temporal::{DecayConstants, TemporalParser, DAY_SECS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Builtin,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    /// Builtin only; an external encoder reports its own dimension.
    pub dim: usize,
    pub bigrams: bool,
    pub endpoint: Option<String>,
    pub credential_env_var: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Builtin,
            dim: DEFAULT_DIM,
            bigrams: true,
            endpoint: None,
            credential_env_var: None,
            timeout_ms: 30_000,
            max_retries: 2,
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Arc<dyn Encoder>, ConfigError> {
        Ok(match self.kind {
            EmbedderKind::Builtin => {
                if self.dim == 0 {
                    return Err(ConfigError::Invalid("embedder.dim must be positive".into()));
                }
                Arc::new(HashingEmbedder::new(self.dim).with_bigrams(self.bigrams))
            }
            EmbedderKind::External => {
                let endpoint = self.endpoint.as_deref().ok_or_else(|| {
                    ConfigError::Invalid("external embedder requires an endpoint".into())
                })?;
                Arc::new(ExternalEncoder::connect(
                    endpoint,
                    Duration::from_millis(self.timeout_ms),
                    self.max_retries,
                    self.credential_env_var.as_deref(),
                )?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub ocr: ProviderConfig,
    pub caption: ProviderConfig,
    pub completion: ProviderConfig,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            ocr: ProviderConfig::mock(),
            caption: ProviderConfig::mock(),
            completion: ProviderConfig::mock(),
        }
    }
}

impl ProvidersConfig {
    pub fn build(&self) -> Result<Augmenter, ConfigError> {
        Ok(Augmenter::new(
            self.ocr.build()?,
            self.caption.build()?,
            self.completion.build()?,
        ))
    }

    fn all_mut(&mut self) -> [&mut ProviderConfig; 3] {
        [&mut self.ocr, &mut self.caption, &mut self.completion]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub strategy: RerankStrategy,
    /// When absent the bundled reference weights are used.
    pub weights_path: Option<PathBuf>,
    pub k_retrieve: usize,
    pub k_generate: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub decay_short_days: f64,
    pub decay_mid_days: f64,
    pub decay_long_days: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let s = EngineSettings::default();
        let day = DAY_SECS as f64;
        Self {
            strategy: s.strategy,
            weights_path: None,
            k_retrieve: s.k_retrieve,
            k_generate: s.k_generate,
            bm25_k1: s.bm25.k1,
            bm25_b: s.bm25.b,
            decay_short_days: s.decay.short_secs / day,
            decay_mid_days: s.decay.mid_secs / day,
            decay_long_days: s.decay.long_secs / day,
        }
    }
}

impl RetrievalConfig {
    pub fn settings(&self) -> EngineSettings {
        let day = DAY_SECS as f64;
        EngineSettings {
            strategy: self.strategy,
            k_retrieve: self.k_retrieve,
            k_generate: self.k_generate,
            decay: DecayConstants {
                short_secs: self.decay_short_days * day,
                mid_secs: self.decay_mid_days * day,
                long_secs: self.decay_long_days * day,
            },
            bm25: Bm25Params {
                k1: self.bm25_k1,
                b: self.bm25_b,
            },
        }
    }

    pub fn weights(&self) -> Result<FusionWeights, ConfigError> {
        match &self.weights_path {
            Some(p) => Ok(FusionWeights::load(p)?),
            None => Ok(FusionWeights::reference()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Mock only: JSONL file of `{"contains","response"}` rules.
    #[serde(default)]
    pub mock_rules: Option<PathBuf>,
    /// Mock only: reply used when no rule matches.
    #[serde(default)]
    pub mock_fallback: Option<String>,
    #[serde(default = "default_backend_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_backend_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub credential_env_var: Option<String>,
}

fn default_backend_timeout() -> u64 {
    60_000
}

fn default_backend_retries() -> u32 {
    2
}

impl BackendConfig {
    pub fn mock() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            mock_rules: None,
            mock_fallback: None,
            timeout_ms: default_backend_timeout(),
            max_retries: default_backend_retries(),
            credential_env_var: None,
        }
    }

    pub fn build(&self) -> Result<Arc<dyn LlmBackend>, ConfigError> {
        Ok(match self.kind {
            BackendKind::Mock => {
                let mut b = match &self.mock_rules {
                    Some(p) => MockBackend::from_jsonl(p).map_err(|source| ConfigError::Io {
                        path: p.display().to_string(),
                        source,
                    })?,
                    None => MockBackend::default(),
                };
                if let Some(f) = &self.mock_fallback {
                    b = b.with_fallback(f.clone());
                }
                Arc::new(b)
            }
            BackendKind::Http => {
                let endpoint = self.endpoint.as_deref().ok_or_else(|| {
                    ConfigError::Invalid("http backend requires an endpoint".into())
                })?;
                Arc::new(
                    HttpBackend::new(
                        endpoint,
                        Duration::from_millis(self.timeout_ms),
                        self.max_retries,
                    )
                    .with_credential_env(self.credential_env_var.as_deref()),
                )
            }
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub generator: Option<BackendConfig>,
    pub judge: Option<BackendConfig>,
    /// Absent means the rule-based parser.
    pub datetime_parser: Option<BackendConfig>,
}

impl BackendsConfig {
    fn all_mut(&mut self) -> impl Iterator<Item = &mut BackendConfig> {
        [
            &mut self.generator,
            &mut self.judge,
            &mut self.datetime_parser,
        ]
        .into_iter()
        .flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkersConfig {
    pub augment: usize,
    pub generate: usize,
    pub eval: usize,
}

impl Default for WorkersConfig {
    fn default() -> Self {
        Self {
            augment: 4,
            generate: 4,
            eval: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub store_path: PathBuf,
    pub seed: u64,
    pub embedder: EmbedderConfig,
    pub providers: ProvidersConfig,
    pub retrieval: RetrievalConfig,
    pub backends: BackendsConfig,
    pub workers: WorkersConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            store_path: PathBuf::from("memories.store.jsonl"),
            seed: 0,
            embedder: EmbedderConfig::default(),
            providers: ProvidersConfig::default(),
            retrieval: RetrievalConfig::default(),
            backends: BackendsConfig::default(),
            workers: WorkersConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl EngineConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.store_path);
        if let Some(p) = self.retrieval.weights_path.as_mut() {
            resolve(base, p);
        }
        for b in self.backends.all_mut() {
            if let Some(p) = b.mock_rules.as_mut() {
                resolve(base, p);
            }
        }
        for p in self.providers.all_mut() {
            if p.provider_kind == ProviderKind::MockSidecar {
                let mut root = PathBuf::from(p.sidecar_root.clone().unwrap_or_default());
                resolve(base, &mut root);
                p.sidecar_root = Some(root.display().to_string());
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = ConfigError::Invalid;
        self.retrieval.settings().validate().map_err(invalid)?;
        if self.embedder.kind == EmbedderKind::Builtin && self.embedder.dim == 0 {
            return Err(ConfigError::Invalid("embedder.dim must be positive".into()));
        }
        for p in [
            &self.providers.ocr,
            &self.providers.caption,
            &self.providers.completion,
        ] {
            p.validate().map_err(ConfigError::Invalid)?;
        }
        if self.workers.augment == 0 || self.workers.generate == 0 || self.workers.eval == 0 {
            return Err(ConfigError::Invalid(
                "worker caps must be at least 1".into(),
            ));
        }
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!(
                    "{what} {} does not exist",
                    p.display()
                )))
            }
        };
        if let Some(p) = &self.retrieval.weights_path {
            must_exist(p, "weights file")?;
        }
        for b in [
            &self.backends.generator,
            &self.backends.judge,
            &self.backends.datetime_parser,
        ]
        .into_iter()
        .flatten()
        {
            if let Some(p) = &b.mock_rules {
                must_exist(p, "mock rules file")?;
            }
            if b.kind == BackendKind::Http && b.endpoint.is_none() {
                return Err(ConfigError::Invalid(
                    "http backend requires an endpoint".into(),
                ));
            }
        }
        // The store itself may not exist yet, but its directory must be creatable.
        if let Some(dir) = self
            .store_path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
        {
            if dir.exists() && !dir.is_dir() {
                return Err(ConfigError::Invalid(format!(
                    "{} is not a directory",
                    dir.display()
                )));
            }
        }
        Ok(())
    }

    pub fn open_store(&self, dim: usize) -> Result<MemoryStore, ConfigError> {
        if let Some(dir) = self
            .store_path
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
        {
            std::fs::create_dir_all(dir).map_err(|source| ConfigError::Io {
                path: dir.display().to_string(),
                source,
            })?;
        }
        Ok(MemoryStore::open(&self.store_path, dim)?)
    }

    pub fn build_augmenter(&self) -> Result<Augmenter, ConfigError> {
        self.providers.build()
    }

    pub fn build_judge(&self) -> Result<Option<Arc<dyn LlmBackend>>, ConfigError> {
        self.backends
            .judge
            .as_ref()
            .map(BackendConfig::build)
            .transpose()
    }

    /// Wires an engine over an already opened store.
    pub fn build_engine_with(
        &self,
        store: Arc<MemoryStore>,
        encoder: Arc<dyn Encoder>,
    ) -> Result<Engine, ConfigError> {
        let parser = match &self.backends.datetime_parser {
            Some(b) => TemporalParser::llm(b.build()?),
            None => TemporalParser::default(),
        };
        let generator = self
            .backends
            .generator
            .as_ref()
            .map(|b| {
                b.build()
                    .map(|be| AnswerGenerator::new(be).with_workers(self.workers.generate))
            })
            .transpose()?;
        Ok(Engine::new(store, encoder)?
            .with_settings(self.retrieval.settings())
            .with_weights(Some(self.retrieval.weights()?))
            .with_parser(parser)
            .with_generator(generator))
    }

    /// Opens the store and builds the full engine.
    pub fn build_engine(&self) -> Result<Engine, ConfigError> {
        let encoder = self.embedder.build()?;
        let store = Arc::new(self.open_store(encoder.dim())?);
        self.build_engine_with(store, encoder)
    }
}

impl Engine {
    pub fn from_config(cfg: &EngineConfig) -> Result<Self, ConfigError> {
        cfg.build_engine()
    }
}
