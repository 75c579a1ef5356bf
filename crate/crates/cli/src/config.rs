//! Settings merged from flags > `KIWI_*` environment > TOML config file.
//!
//! Flag/env precedence is handled by clap (`env = ...` on each flag); this
//! module supplies the file layer underneath and validates the result before
//! any work starts.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use kiwi_core::align::AnchorConfig;
use kiwi_core::pipeline::{
    ApiStyle, Backend, GenerationConfig, HttpBackend, HttpBackendConfig, LexiconBackend, PipelineConfig, ReInput,
    SegmenterConfig,
};

use crate::CliError;

/// The TOML config file. Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub backend: BackendSection,
    pub generation: GenerationSection,
    pub anchor: AnchorSection,
    pub segmenter: SegmenterSection,
    pub service: ServiceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendSection {
    /// `http(s)://…` endpoint or `mock:<lexicon.tsv>`.
    pub url: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub api_style: ApiStyle,
    pub timeout_secs: f64,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self { url: None, api_key: None, model: "default".into(), api_style: ApiStyle::Completion, timeout_secs: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    pub batch_size: usize,
    pub max_retries: usize,
    pub retry_base_delay_ms: u64,
    pub temperature: f64,
    pub max_output_chars: usize,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            batch_size: g.batch_size,
            max_retries: g.max_retries,
            retry_base_delay_ms: g.retry_base_delay.as_millis() as u64,
            temperature: g.temperature,
            max_output_chars: g.max_output_chars,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorSection {
    pub confidence_threshold: f64,
    pub snap_to_words: bool,
}

impl Default for AnchorSection {
    fn default() -> Self {
        let a = AnchorConfig::default();
        Self { confidence_threshold: a.confidence_threshold, snap_to_words: a.snap_to_words }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterSection {
    /// Replaces the built-in protected-abbreviation list when set.
    pub abbreviations: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceSection {
    pub bind: String,
    pub cors_origins: Vec<String>,
    pub max_body_bytes: usize,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            cors_origins: Vec::new(),
            max_body_bytes: kiwi_service::DEFAULT_MAX_BODY_BYTES,
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&src).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Fully merged settings shared by `annotate` and `serve`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub backend: BackendSection,
    pub generation: GenerationSection,
    pub anchor: AnchorSection,
    pub segmenter: SegmenterSection,
    pub re_input: ReInput,
    pub relations: bool,
}

/// Values coming from flags or `KIWI_*` variables; `None` defers to the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backend: Option<String>,
    pub api_key: Option<String>,
    pub batch_size: Option<usize>,
    pub re_input: ReInput,
    pub relations: bool,
}

impl ResolvedConfig {
    pub fn merge(file: FileConfig, o: Overrides) -> Result<Self, CliError> {
        let mut backend = file.backend;
        if let Some(url) = o.backend {
            backend.url = Some(url);
        }
        if let Some(key) = o.api_key.filter(|k| !k.is_empty()) {
            backend.api_key = Some(key);
        }
        let mut generation = file.generation;
        if let Some(n) = o.batch_size {
            generation.batch_size = n;
        }
        let cfg = Self {
            backend,
            generation,
            anchor: file.anchor,
            segmenter: file.segmenter,
            re_input: o.re_input,
            relations: o.relations,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        match self.backend.url.as_deref() {
            None | Some("") => return bad("no backend configured (use --backend, KIWI_BACKEND_URL or [backend] url)"),
            Some(u) if !(u.starts_with("http://") || u.starts_with("https://") || u.starts_with("mock:")) => {
                return Err(CliError::Config(format!("backend `{u}` must be an http(s):// URL or mock:<lexicon.tsv>")))
            }
            _ => {}
        }
        if self.generation.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.generation.temperature.is_nan() || self.generation.temperature < 0.0 {
            return bad("temperature must be non-negative");
        }
        if self.generation.max_output_chars == 0 {
            return bad("max_output_chars must be at least 1");
        }
        if !(self.anchor.confidence_threshold > 0.0 && self.anchor.confidence_threshold <= 1.0) {
            return bad("anchor.confidence_threshold must lie in (0, 1]");
        }
        if !(self.backend.timeout_secs > 0.0 && self.backend.timeout_secs.is_finite()) {
            return bad("backend.timeout_secs must be positive");
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let g = &self.generation;
        PipelineConfig {
            generation: GenerationConfig {
                temperature: g.temperature,
                max_output_chars: g.max_output_chars,
                batch_size: g.batch_size,
                max_retries: g.max_retries,
                retry_base_delay: Duration::from_millis(g.retry_base_delay_ms),
            },
            anchor: AnchorConfig {
                confidence_threshold: self.anchor.confidence_threshold,
                snap_to_words: self.anchor.snap_to_words,
                ..AnchorConfig::default()
            },
            re_input: self.re_input,
            relations: self.relations,
        }
    }

    /// SHA-256 of the canonical JSON of this config (API key excluded).
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(&serde_json::to_value(self).expect("config serializes"))
            .expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn build_backend(&self) -> Result<Box<dyn Backend>, CliError> {
        build_backend(&self.backend)
    }
}

pub fn segmenter(section: &SegmenterSection) -> SegmenterConfig {
    match &section.abbreviations {
        Some(list) => SegmenterConfig { abbreviations: list.clone() },
        None => SegmenterConfig::default(),
    }
}

pub fn build_backend(b: &BackendSection) -> Result<Box<dyn Backend>, CliError> {
    let url = b.url.as_deref().unwrap_or_default();
    if let Some(path) = url.strip_prefix("mock:") {
        let src = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read mock lexicon {path}: {e}")))?;
        let lex = LexiconBackend::from_tsv(&src).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
        return Ok(Box::new(lex));
    }
    Ok(Box::new(HttpBackend::new(HttpBackendConfig {
        endpoint: url.to_string(),
        model_name: b.model.clone(),
        api_key: b.api_key.clone(),
        api_style: b.api_style,
        request_timeout: Duration::from_secs_f64(b.timeout_secs),
    })))
}
