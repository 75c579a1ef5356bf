//! Text-generation backends.
//!
//! The pipeline only needs "prompt in, text out". [`HttpBackend`] speaks a
//! minimal completion contract (`{model, prompt, temperature, max_tokens}` →
//! `{text}`) or the common chat-completion shape. [`LexiconBackend`] is a
//! deterministic stand-in that tags dictionary hits, used for tests and dry
//! runs without a model.

use std::collections::HashMap;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schema::{AnnotationSet, EntityKind};
use crate::spanmark::{decode_with, PromptTask, PromptTemplate, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    pub text: String,
    pub latency: Duration,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {code}")]
    Status { code: u16 },
    #[error("malformed backend response: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Transport failures plus 429/5xx are worth retrying; a completion that
    /// arrived but is useless never is.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { code } => *code == 429 || *code >= 500,
            BackendError::Protocol(_) => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;

    /// Stable description recorded in run manifests.
    fn identity(&self) -> String;

    /// Cheap liveness probe.
    fn is_reachable(&self) -> bool {
        true
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }

    fn identity(&self) -> String {
        (**self).identity()
    }

    fn is_reachable(&self) -> bool {
        (**self).is_reachable()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    /// `{model, prompt, temperature, max_tokens}` → `{text}`.
    #[default]
    Completion,
    /// OpenAI-style `/chat/completions`.
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub model_name: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub api_style: ApiStyle,
    pub request_timeout: Duration,
}

impl HttpBackendConfig {
    /// Completion-style endpoint with a 60 s timeout and no API key.
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_name: "default".into(),
            api_key: None,
            api_style: ApiStyle::Completion,
            request_timeout: Duration::from_secs(60),
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct CompletionReply {
    text: String,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: String,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn post<T: Serialize>(&self, body: &T) -> Result<ureq::http::Response<ureq::Body>, BackendError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(body).map_err(classify)?;
        let code = resp.status().as_u16();
        if !(200..300).contains(&code) {
            return Err(BackendError::Status { code });
        }
        Ok(resp)
    }
}

fn classify(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::StatusCode(code) => BackendError::Status { code },
        ureq::Error::Json(e) => BackendError::Protocol(e.to_string()),
        ureq::Error::BadUri(u) => BackendError::Protocol(format!("bad endpoint `{u}`")),
        other => BackendError::Transport(other.to_string()),
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let started = Instant::now();
        let model = self.config.model_name.as_str();
        let (text, usage) = match self.config.api_style {
            ApiStyle::Completion => {
                let body = CompletionBody {
                    model,
                    prompt: &request.prompt,
                    temperature: request.temperature,
                    max_tokens: request.max_tokens,
                };
                let reply: CompletionReply = self.post(&body)?.body_mut().read_json().map_err(|e| match e {
                    ureq::Error::Json(e) => BackendError::Protocol(e.to_string()),
                    other => classify(other),
                })?;
                (reply.text, reply.usage)
            }
            ApiStyle::Chat => {
                let body = ChatBody {
                    model,
                    messages: [ChatMessage { role: "user", content: &request.prompt }],
                    temperature: request.temperature,
                    max_tokens: request.max_tokens,
                };
                let reply: ChatReply = self.post(&body)?.body_mut().read_json().map_err(|e| match e {
                    ureq::Error::Json(e) => BackendError::Protocol(e.to_string()),
                    other => classify(other),
                })?;
                let text = reply
                    .choices
                    .into_iter()
                    .next()
                    .map(|c| c.message.content)
                    .ok_or_else(|| BackendError::Protocol("no choices in reply".into()))?;
                (text, reply.usage)
            }
        };
        Ok(GenerationResponse {
            text,
            latency: started.elapsed(),
            prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }

    fn identity(&self) -> String {
        let style = match self.config.api_style {
            ApiStyle::Completion => "completion",
            ApiStyle::Chat => "chat",
        };
        format!("http:{style}:{}@{}", self.config.model_name, self.config.endpoint)
    }

    fn is_reachable(&self) -> bool {
        let Ok(uri) = self.config.endpoint.parse::<ureq::http::Uri>() else {
            return false;
        };
        let Some(host) = uri.host() else {
            return false;
        };
        let port = uri.port_u16().unwrap_or(if uri.scheme_str() == Some("https") { 443 } else { 80 });
        let Ok(addrs) = (host, port).to_socket_addrs() else {
            return false;
        };
        let timeout = self.config.request_timeout.min(Duration::from_secs(2));
        addrs.into_iter().any(|a| TcpStream::connect_timeout(&a, timeout).is_ok())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LexiconError {
    #[error("line {line}: expected `surface<TAB>class`")]
    Malformed { line: usize },
    #[error("line {line}: {source}")]
    UnknownClass { line: usize, source: crate::schema::UnknownName },
    #[error("surface `{surface}` is listed as both {a} and {b}")]
    Conflict { surface: String, a: EntityKind, b: EntityKind },
}

/// Deterministic backend that tags dictionary hits.
///
/// The prompt is parsed back into its task and input sentence. Lexicon
/// entries whose class is valid for the task are matched longest-first, left
/// to right, at word boundaries, and the sentence is echoed with those hits
/// wrapped in span tags. An RE prompt's own main-entity tag is not echoed.
#[derive(Debug, Clone, Default)]
pub struct LexiconBackend {
    /// Entries sorted by descending char length, then surface.
    entries: Vec<(Vec<char>, EntityKind)>,
}

impl LexiconBackend {
    pub fn new(lexicon: impl IntoIterator<Item = (String, EntityKind)>) -> Result<Self, LexiconError> {
        let mut map: HashMap<String, EntityKind> = HashMap::new();
        for (surface, kind) in lexicon {
            if surface.is_empty() {
                continue;
            }
            if let Some(&prev) = map.get(&surface) {
                if prev != kind {
                    return Err(LexiconError::Conflict { surface, a: prev, b: kind });
                }
            }
            map.insert(surface, kind);
        }
        let mut entries: Vec<(Vec<char>, EntityKind)> =
            map.into_iter().map(|(s, k)| (s.chars().collect(), k)).collect();
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(Self { entries })
    }

    /// Parse `surface<TAB>class` lines; blank lines and `#` comments are skipped.
    pub fn from_tsv(src: &str) -> Result<Self, LexiconError> {
        let mut items = Vec::new();
        for (i, line) in src.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, class) = line.split_once('\t').ok_or(LexiconError::Malformed { line: i + 1 })?;
            let kind = class
                .trim()
                .parse::<EntityKind>()
                .map_err(|source| LexiconError::UnknownClass { line: i + 1, source })?;
            items.push((surface.to_string(), kind));
        }
        Self::new(items)
    }

    /// Lexicon of every mention surface in the given gold sets.
    pub fn from_annotations<'a>(sets: impl IntoIterator<Item = &'a AnnotationSet>) -> Result<Self, LexiconError> {
        Self::new(sets.into_iter().flat_map(|s| s.mentions.iter().map(|m| (m.surface.clone(), m.kind))))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tag lexicon hits accepted by `vocab` in `text`.
    pub fn tag(&self, text: &str, vocab: Vocabulary) -> String {
        let chars: Vec<char> = text.chars().collect();
        let entries: Vec<&(Vec<char>, EntityKind)> = self.entries.iter().filter(|(_, k)| vocab.accepts(*k)).collect();
        let is_word = |c: char| c.is_alphanumeric();
        let mut out = String::with_capacity(text.len() * 2);
        let mut i = 0;
        while i < chars.len() {
            let at_boundary = i == 0 || !is_word(chars[i - 1]) || !is_word(chars[i]);
            let hit = at_boundary
                .then(|| {
                    entries.iter().find(|(surface, _)| {
                        let end = i + surface.len();
                        end <= chars.len()
                            && chars[i..end] == surface[..]
                            && (end == chars.len() || !is_word(chars[end]) || !is_word(chars[end - 1]))
                    })
                })
                .flatten();
            match hit {
                Some((surface, kind)) => {
                    out.push_str("<span class=\"");
                    out.push_str(kind.name());
                    out.push_str("\">");
                    out.extend(surface.iter());
                    out.push_str("</span>");
                    i += surface.len();
                }
                None => {
                    out.push(chars[i]);
                    i += 1;
                }
            }
        }
        out
    }
}

/// Split a rendered prompt back into its task and input text.
pub fn parse_prompt(prompt: &str) -> Option<(PromptTask, &str)> {
    for task in PromptTask::ALL {
        let template = PromptTemplate::get(task);
        let rendered = template.render("\u{0}");
        let (prefix, suffix) = rendered.split_once('\u{0}').expect("marker present");
        if let Some(rest) = prompt.strip_prefix(prefix) {
            if let Some(input) = rest.strip_suffix(suffix) {
                return Some((task, input));
            }
        }
    }
    None
}

impl Backend for LexiconBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let started = Instant::now();
        let (task, input) = parse_prompt(&request.prompt)
            .ok_or_else(|| BackendError::Protocol("prompt does not match any template".into()))?;
        let text = match task {
            PromptTask::Ner => self.tag(input, Vocabulary::MainEntities),
            PromptTask::Re(main) => {
                let plain = decode_with(input, Vocabulary::MainEntities).plain_text;
                self.tag(&plain, Vocabulary::ModifiersOf(main))
            }
        };
        Ok(GenerationResponse { text, latency: started.elapsed(), prompt_tokens: None, completion_tokens: None })
    }

    fn identity(&self) -> String {
        let mut h = Sha256::new();
        for (surface, kind) in &self.entries {
            h.update(surface.iter().collect::<String>().as_bytes());
            h.update([0]);
            h.update(kind.name().as_bytes());
            h.update([0]);
        }
        format!("mock-lexicon:{}:{}", self.entries.len(), hex::encode(&h.finalize()[..8]))
    }
}

/// Convenience for tests: a lexicon of `(surface, class name)` pairs.
pub fn mock_backend<'a>(lexicon: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<LexiconBackend, LexiconError> {
    let mut items = Vec::new();
    for (i, (surface, class)) in lexicon.into_iter().enumerate() {
        let kind = class.parse::<EntityKind>().map_err(|source| LexiconError::UnknownClass { line: i + 1, source })?;
        items.push((surface.to_string(), kind));
    }
    LexiconBackend::new(items)
}
