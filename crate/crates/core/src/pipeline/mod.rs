//! Two-stage extraction: NER per sentence, then one RE request per main
//! entity, against a pluggable [`Backend`].

pub mod backend;
mod segment;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{anchor_spans_with, AnchorConfig, DroppedSpan};
use crate::schema::{AnnotationSet, Document, EntityKind, EntityMention, Relation};
use crate::spanmark::{build_ner_prompt, build_re_prompt, decode_with, ParseDiagnostic, PromptError, Vocabulary};

pub use backend::{
    mock_backend, ApiStyle, Backend, BackendError, GenerationRequest, GenerationResponse, HttpBackend,
    HttpBackendConfig, LexiconBackend, LexiconError,
};
pub use segment::{segment, segment_with, SegmenterConfig, DEFAULT_ABBREVIATIONS};

/// Sampling and concurrency settings for generation requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    /// Completions are truncated to this many chars.
    pub max_output_chars: usize,
    /// Maximum number of in-flight generation requests.
    pub batch_size: usize,
    pub max_retries: usize,
    /// First retry delay; doubles on every further attempt.
    pub retry_base_delay: Duration,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_chars: 4096,
            batch_size: 100,
            max_retries: 3,
            retry_base_delay: Duration::from_millis(200),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReInput {
    /// RE runs on the main entities NER found.
    #[default]
    Pipeline,
    /// RE runs on gold main entities supplied by the caller.
    Gold,
}

impl std::str::FromStr for ReInput {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pipeline" => Ok(ReInput::Pipeline),
            "gold" => Ok(ReInput::Gold),
            other => Err(format!("unknown RE input mode `{other}` (expected pipeline|gold)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub generation: GenerationConfig,
    pub anchor: AnchorConfig,
    pub re_input: ReInput,
    /// Run the RE stage at all.
    pub relations: bool,
}

impl PipelineConfig {
    pub fn new() -> Self {
        Self { relations: true, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("backend unavailable after {attempts} attempts: {source}")]
    BackendUnavailable { attempts: usize, source: BackendError },
    #[error("backend rejected the request: {0}")]
    Backend(BackendError),
    #[error("main entity `{0}` is not inside any sentence")]
    MainOutsideSentences(String),
    #[error("no gold annotations supplied for document `{0}`")]
    MissingGold(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ner,
    Re,
}

/// Decoder and anchoring problems for one request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceDiagnostic {
    pub doc_id: String,
    pub stage: Stage,
    pub sentence: usize,
    /// For RE requests, the main entity the request was about.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub main: Option<String>,
    pub parse: Vec<ParseDiagnostic>,
    #[serde(serialize_with = "ser_dropped")]
    pub dropped: Vec<DroppedSpan>,
}

fn ser_dropped<S: serde::Serializer>(d: &[DroppedSpan], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(d.len()))?;
    for x in d {
        seq.serialize_element(&serde_json::json!({
            "type": x.kind.name(),
            "start": x.start,
            "end": x.end,
            "reason": x.reason,
        }))?;
    }
    seq.end()
}

/// Retries performed while one request was in flight.
#[derive(Debug, Default)]
struct Counters {
    requests: AtomicUsize,
    retries: AtomicUsize,
}

fn generate(
    backend: &dyn Backend,
    prompt: String,
    config: &GenerationConfig,
    counters: &Counters,
) -> Result<String, PipelineError> {
    let request = GenerationRequest {
        prompt,
        temperature: config.temperature,
        max_tokens: config.max_output_chars,
    };
    counters.requests.fetch_add(1, Ordering::Relaxed);
    let mut attempt = 0;
    loop {
        match backend.generate(&request) {
            Ok(resp) => {
                let mut text = resp.text;
                if let Some((b, _)) = text.char_indices().nth(config.max_output_chars) {
                    text.truncate(b);
                }
                return Ok(text);
            }
            Err(e) if e.is_retryable() && attempt < config.max_retries => {
                let delay = config.retry_base_delay.saturating_mul(1 << attempt.min(16));
                log::debug!("retrying after {e} (attempt {})", attempt + 1);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                attempt += 1;
                counters.retries.fetch_add(1, Ordering::Relaxed);
            }
            Err(e) if e.is_retryable() => {
                return Err(PipelineError::BackendUnavailable { attempts: attempt + 1, source: e })
            }
            Err(e) => return Err(PipelineError::Backend(e)),
        }
    }
}

/// Spans found in one sentence by one request, in document offsets.
struct SentenceResult {
    spans: Vec<(EntityKind, usize, usize)>,
    diagnostic: Option<SentenceDiagnostic>,
}

fn extract(
    doc: &Document,
    sentence_index: usize,
    stage: Stage,
    main: Option<&EntityMention>,
    backend: &dyn Backend,
    config: &PipelineConfig,
    counters: &Counters,
) -> Result<SentenceResult, PipelineError> {
    let sentence = doc.sentences()[sentence_index];
    let text = doc.sentence_text(&sentence);
    let (prompt, vocab) = match main {
        None => (build_ner_prompt(text)?, Vocabulary::MainEntities),
        Some(m) => {
            let t = m.kind.as_main().ok_or_else(|| PromptError::NotMainEntity(m.id.clone()))?;
            (build_re_prompt(text, sentence.start, m)?, Vocabulary::ModifiersOf(t))
        }
    };
    let output = generate(backend, prompt, &config.generation, counters)?;
    let decoded = decode_with(&output, vocab);
    let anchored = anchor_spans_with(text, &decoded, &config.anchor);
    let spans = anchored
        .spans
        .iter()
        .map(|s| (s.kind, sentence.start + s.source_start, sentence.start + s.source_end))
        .collect();
    let diagnostic = (!decoded.diagnostics.is_empty() || !anchored.dropped.is_empty()).then(|| SentenceDiagnostic {
        doc_id: doc.id().to_string(),
        stage,
        sentence: sentence_index,
        main: main.map(|m| m.id.clone()),
        parse: decoded.diagnostics,
        dropped: anchored.dropped,
    });
    Ok(SentenceResult { spans, diagnostic })
}

/// Next `T<n>` id not already taken.
struct IdAllocator {
    next: usize,
    taken: HashSet<String>,
}

impl IdAllocator {
    fn new<'a>(existing: impl IntoIterator<Item = &'a str>) -> Self {
        Self { next: 1, taken: existing.into_iter().map(str::to_string).collect() }
    }

    fn fresh(&mut self) -> String {
        loop {
            let id = format!("T{}", self.next);
            self.next += 1;
            if self.taken.insert(id.clone()) {
                return id;
            }
        }
    }
}

/// Main mentions with diagnostics, from one NER request per sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct NerOutput {
    pub mentions: Vec<EntityMention>,
    pub diagnostics: Vec<SentenceDiagnostic>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReOutput {
    pub modifiers: Vec<EntityMention>,
    pub relations: Vec<Relation>,
    pub diagnostics: Vec<SentenceDiagnostic>,
}

pub fn run_ner(doc: &Document, backend: &dyn Backend, config: &PipelineConfig) -> Result<NerOutput, PipelineError> {
    let counters = Counters::default();
    let results = (0..doc.sentences().len())
        .map(|i| extract(doc, i, Stage::Ner, None, backend, config, &counters))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(assemble_ner(doc, results))
}

fn assemble_ner(doc: &Document, results: Vec<SentenceResult>) -> NerOutput {
    let mut ids = IdAllocator::new([]);
    let mut mentions = Vec::new();
    let mut diagnostics = Vec::new();
    for r in results {
        for (kind, start, end) in r.spans {
            let surface = doc.slice(start, end).unwrap_or_default().to_string();
            mentions.push(EntityMention::new(ids.fresh(), kind, start, end, surface));
        }
        diagnostics.extend(r.diagnostic);
    }
    NerOutput { mentions, diagnostics }
}

fn host_sentence_index(doc: &Document, main: &EntityMention) -> Result<usize, PipelineError> {
    let s = doc
        .host_sentence(main.start, main.end)
        .ok_or_else(|| PipelineError::MainOutsideSentences(main.id.clone()))?;
    Ok(doc.sentences().iter().position(|x| x == s).expect("host sentence is in the document"))
}

pub fn run_re(
    doc: &Document,
    mains: &[EntityMention],
    backend: &dyn Backend,
    config: &PipelineConfig,
) -> Result<ReOutput, PipelineError> {
    let counters = Counters::default();
    let mut results = Vec::with_capacity(mains.len());
    for m in mains {
        let i = host_sentence_index(doc, m)?;
        results.push(extract(doc, i, Stage::Re, Some(m), backend, config, &counters)?);
    }
    Ok(assemble_re(doc, mains, results))
}

fn assemble_re(doc: &Document, mains: &[EntityMention], results: Vec<SentenceResult>) -> ReOutput {
    let mut ids = IdAllocator::new(mains.iter().map(|m| m.id.as_str()));
    let mut by_span: HashMap<(EntityKind, usize, usize), String> = HashMap::new();
    let mut modifiers = Vec::new();
    let mut relations = Vec::new();
    let mut diagnostics = Vec::new();
    for (main, r) in mains.iter().zip(results) {
        for (kind, start, end) in r.spans {
            let Some(label) = kind.as_modifier() else { continue };
            let id = by_span
                .entry((kind, start, end))
                .or_insert_with(|| {
                    let id = ids.fresh();
                    let surface = doc.slice(start, end).unwrap_or_default().to_string();
                    modifiers.push(EntityMention::new(id.clone(), kind, start, end, surface));
                    id
                })
                .clone();
            let rel = Relation { main: main.id.clone(), modifier: id, label };
            if !relations.contains(&rel) {
                relations.push(rel);
            }
        }
        diagnostics.extend(r.diagnostic);
    }
    ReOutput { modifiers, relations, diagnostics }
}

/// Wall-clock per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageTimings {
    pub segment_ms: f64,
    pub ner_ms: f64,
    pub re_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RunStats {
    pub documents: usize,
    pub sentences: usize,
    pub ner_requests: usize,
    pub re_requests: usize,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocumentFailure {
    pub doc_id: String,
    pub error: String,
    /// True when the backend could not be reached at all.
    pub backend_unavailable: bool,
}

/// Output of [`annotate_batch`]: one annotation set per input document, in
/// input order. Failed documents get an empty set and a failure entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub annotations: Vec<AnnotationSet>,
    pub diagnostics: Vec<SentenceDiagnostic>,
    pub failures: Vec<DocumentFailure>,
    pub timings: StageTimings,
    pub stats: RunStats,
}

/// Run `f` over `jobs` on at most `workers` threads; results keep job order.
fn run_jobs<T: Sync, R: Send>(jobs: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, jobs.len().max(1));
    if workers == 1 {
        return jobs.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().map(|r| r.expect("every job ran")).collect()
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Annotate `docs` with at most `batch_size` requests in flight.
///
/// With [`ReInput::Gold`], `gold` must contain a set for every document; its
/// main mentions replace NER output.
pub fn annotate_batch(
    docs: &[Document],
    backend: &dyn Backend,
    config: &PipelineConfig,
    gold: Option<&[AnnotationSet]>,
) -> PipelineRun {
    let started = Instant::now();
    let counters = Counters::default();
    let workers = config.generation.batch_size.max(1);
    let mut failures: Vec<Option<PipelineError>> = vec![None; docs.len()];

    let ner_started = Instant::now();
    let mut mains: Vec<Vec<EntityMention>> = vec![Vec::new(); docs.len()];
    let mut ner_diags: Vec<Vec<SentenceDiagnostic>> = vec![Vec::new(); docs.len()];
    match config.re_input {
        ReInput::Pipeline => {
            let jobs: Vec<(usize, usize)> = docs
                .iter()
                .enumerate()
                .flat_map(|(d, doc)| (0..doc.sentences().len()).map(move |s| (d, s)))
                .collect();
            let results = run_jobs(&jobs, workers, |&(d, s)| {
                extract(&docs[d], s, Stage::Ner, None, backend, config, &counters)
            });
            let mut per_doc: Vec<Vec<SentenceResult>> = (0..docs.len()).map(|_| Vec::new()).collect();
            for (&(d, _), r) in jobs.iter().zip(results) {
                match r {
                    Ok(r) => per_doc[d].push(r),
                    Err(e) => {
                        failures[d].get_or_insert(e);
                    }
                }
            }
            for (d, results) in per_doc.into_iter().enumerate() {
                if failures[d].is_none() {
                    let out = assemble_ner(&docs[d], results);
                    mains[d] = out.mentions;
                    ner_diags[d] = out.diagnostics;
                }
            }
        }
        ReInput::Gold => {
            let by_id: HashMap<&str, &AnnotationSet> =
                gold.unwrap_or_default().iter().map(|s| (s.doc_id.as_str(), s)).collect();
            for (d, doc) in docs.iter().enumerate() {
                match by_id.get(doc.id()) {
                    Some(set) => mains[d] = set.main_mentions().cloned().collect(),
                    None => failures[d] = Some(PipelineError::MissingGold(doc.id().to_string())),
                }
            }
        }
    }
    let ner_ms = ms(ner_started.elapsed());
    let ner_requests = counters.requests.load(Ordering::Relaxed);

    let re_started = Instant::now();
    let mut re_out: Vec<Option<ReOutput>> = vec![None; docs.len()];
    if config.relations {
        let mut jobs: Vec<(usize, usize, usize)> = Vec::new();
        for (d, doc) in docs.iter().enumerate() {
            if failures[d].is_some() {
                continue;
            }
            for (k, m) in mains[d].iter().enumerate() {
                match host_sentence_index(doc, m) {
                    Ok(s) => jobs.push((d, k, s)),
                    Err(e) => {
                        failures[d].get_or_insert(e);
                    }
                }
            }
        }
        jobs.retain(|&(d, _, _)| failures[d].is_none());
        let results = run_jobs(&jobs, workers, |&(d, k, s)| {
            extract(&docs[d], s, Stage::Re, Some(&mains[d][k]), backend, config, &counters)
        });
        let mut per_doc: Vec<Vec<SentenceResult>> = (0..docs.len()).map(|_| Vec::new()).collect();
        for (&(d, _, _), r) in jobs.iter().zip(results) {
            match r {
                Ok(r) => per_doc[d].push(r),
                Err(e) => {
                    failures[d].get_or_insert(e);
                }
            }
        }
        for (d, results) in per_doc.into_iter().enumerate() {
            if failures[d].is_none() {
                re_out[d] = Some(assemble_re(&docs[d], &mains[d], results));
            }
        }
    }
    let re_ms = ms(re_started.elapsed());
    let total_requests = counters.requests.load(Ordering::Relaxed);

    let mut annotations = Vec::with_capacity(docs.len());
    let mut diagnostics = Vec::new();
    let mut failure_list = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        if let Some(e) = &failures[d] {
            failure_list.push(DocumentFailure {
                doc_id: doc.id().to_string(),
                error: e.to_string(),
                backend_unavailable: matches!(e, PipelineError::BackendUnavailable { .. }),
            });
            annotations.push(AnnotationSet::empty(doc.id()));
            continue;
        }
        let mut set = AnnotationSet::empty(doc.id());
        set.mentions = std::mem::take(&mut mains[d]);
        diagnostics.append(&mut ner_diags[d]);
        if let Some(re) = re_out[d].take() {
            set.mentions.extend(re.modifiers);
            set.relations = re.relations;
            diagnostics.extend(re.diagnostics);
        }
        annotations.push(set);
    }

    PipelineRun {
        annotations,
        diagnostics,
        failures: failure_list,
        timings: StageTimings { segment_ms: 0.0, ner_ms, re_ms, total_ms: ms(started.elapsed()) },
        stats: RunStats {
            documents: docs.len(),
            sentences: docs.iter().map(|d| d.sentences().len()).sum(),
            ner_requests,
            re_requests: total_requests - ner_requests,
            retries: counters.retries.load(Ordering::Relaxed),
        },
    }
}

/// Segment raw notes and annotate them, recording segmentation time.
pub fn annotate_texts(
    notes: &[(String, String)],
    backend: &dyn Backend,
    config: &PipelineConfig,
    segmenter: &SegmenterConfig,
    gold: Option<&[AnnotationSet]>,
) -> (Vec<Document>, PipelineRun) {
    let started = Instant::now();
    let docs: Vec<Document> = notes
        .iter()
        .map(|(id, text)| {
            Document::new(id.clone(), text.clone(), segment_with(text, segmenter)).expect("segmenter output is valid")
        })
        .collect();
    let segment_ms = ms(started.elapsed());
    let mut run = annotate_batch(&docs, backend, config, gold);
    run.timings.segment_ms = segment_ms;
    run.timings.total_ms += segment_ms;
    (docs, run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{MainEntityType as M, ModifierType as Mo};
    use crate::spanmark::DiagnosticKind;
    use std::sync::atomic::AtomicBool;

    fn cfg() -> PipelineConfig {
        let mut c = PipelineConfig::new();
        c.generation.retry_base_delay = Duration::ZERO;
        c.generation.batch_size = 4;
        c
    }

    /// Backend answering each prompt through a closure over (task, input).
    struct Scripted<F>(F);

    impl<F: Fn((crate::spanmark::PromptTask, &str)) -> Result<String, BackendError> + Send + Sync> Backend for Scripted<F> {
        fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            let (task, input) = backend::parse_prompt(&req.prompt).expect("known template");
            let text = (self.0)((task, input))?;
            Ok(GenerationResponse { text, latency: Duration::ZERO, prompt_tokens: None, completion_tokens: None })
        }
        fn identity(&self) -> String {
            "scripted".into()
        }
    }

    #[test]
    fn hgb_labvalue_relation() {
        let doc = Document::segmented("d", "Hgb 10.6 gm / dL");
        let b = mock_backend([("Hgb", "test"), ("10.6 gm / dL", "labvalue")]).unwrap();
        let ner = run_ner(&doc, &b, &cfg()).unwrap();
        assert_eq!(ner.mentions, vec![EntityMention::new("T1", EntityKind::Main(M::Test), 0, 3, "Hgb")]);
        let re = run_re(&doc, &ner.mentions, &b, &cfg()).unwrap();
        assert_eq!(re.modifiers, vec![EntityMention::new("T2", EntityKind::Modifier(Mo::LabValue), 4, 16, "10.6 gm / dL")]);
        assert_eq!(re.relations, vec![Relation { main: "T1".into(), modifier: "T2".into(), label: Mo::LabValue }]);
        assert!(ner.diagnostics.is_empty() && re.diagnostics.is_empty());
    }

    #[test]
    fn untagged_echo_yields_nothing() {
        let doc = Document::segmented("d", "No acute distress. Lungs clear.");
        let ner = run_ner(&doc, &LexiconBackend::default(), &cfg()).unwrap();
        assert!(ner.mentions.is_empty() && ner.diagnostics.is_empty());
        let main = EntityMention::new("T1", EntityKind::Main(M::Problem), 3, 8, "acute");
        let re = run_re(&doc, &[main], &LexiconBackend::default(), &cfg()).unwrap();
        assert!(re.modifiers.is_empty() && re.relations.is_empty());
    }

    #[test]
    fn malformed_tag_degrades_to_diagnostic() {
        let doc = Document::segmented("d", "Fever and rash.");
        let b = Scripted(|_: (crate::spanmark::PromptTask, &str)| {
            Ok(r#"<span class="problem">Fever</span> and <span class="bogus">rash</span>."#.to_string())
        });
        let ner = run_ner(&doc, &b, &cfg()).unwrap();
        assert_eq!(ner.mentions.len(), 1);
        assert_eq!(ner.mentions[0].surface, "Fever");
        assert_eq!(ner.diagnostics.len(), 1);
        assert_eq!(ner.diagnostics[0].parse[0].kind, DiagnosticKind::UnknownClass);
    }

    #[test]
    fn two_mains_get_independent_requests() {
        let doc = Document::segmented("d", "Severe pain and mild rash.");
        let mains = vec![
            EntityMention::new("T1", EntityKind::Main(M::Problem), 7, 11, "pain"),
            EntityMention::new("T2", EntityKind::Main(M::Problem), 21, 25, "rash"),
        ];
        let b = Scripted(|(_, input): (crate::spanmark::PromptTask, &str)| {
            Ok(if input.contains(r#">pain<"#) {
                r#"<span class="severity">Severe</span> pain and mild rash."#.to_string()
            } else {
                r#"Severe pain and <span class="severity">mild</span> rash."#.to_string()
            })
        });
        let re = run_re(&doc, &mains, &b, &cfg()).unwrap();
        let got: Vec<_> = re.relations.iter().map(|r| (r.main.as_str(), re.modifiers.iter().find(|m| m.id == r.modifier).unwrap().surface.as_str())).collect();
        assert_eq!(got, [("T1", "Severe"), ("T2", "mild")]);
    }

    #[test]
    fn modifier_outside_permitted_set_is_dropped() {
        let doc = Document::segmented("d", "Aspirin daily.");
        let main = EntityMention::new("T1", EntityKind::Main(M::Treatment), 0, 7, "Aspirin");
        let b = Scripted(|_: (crate::spanmark::PromptTask, &str)| Ok(r#"Aspirin <span class="frequency">daily</span>."#.to_string()));
        let re = run_re(&doc, &[main], &b, &cfg()).unwrap();
        assert!(re.relations.is_empty());
        assert_eq!(re.diagnostics.len(), 1);
    }

    #[test]
    fn empty_batch() {
        let run = annotate_batch(&[], &LexiconBackend::default(), &cfg(), None);
        assert!(run.annotations.is_empty() && run.failures.is_empty());
        assert_eq!(run.stats, RunStats::default());
    }

    fn corpus() -> (Vec<Document>, LexiconBackend) {
        let docs = vec![
            Document::segmented("a", "Hgb 10.6 gm / dL. No fever or chills."),
            Document::segmented("b", "Patient denies chest pain. Aspirin 81 mg daily."),
            Document::segmented("c", "Lungs clear."),
        ];
        let b = mock_backend([
            ("Hgb", "test"),
            ("10.6 gm / dL", "labvalue"),
            ("No", "negation"),
            ("denies", "negation"),
            ("fever", "problem"),
            ("chills", "problem"),
            ("chest pain", "problem"),
            ("Aspirin", "drug"),
            ("81 mg", "dosage"),
            ("daily", "frequency"),
        ])
        .unwrap();
        (docs, b)
    }

    #[test]
    fn batch_request_budget_and_order() {
        let (docs, b) = corpus();
        let run = annotate_batch(&docs, &b, &cfg(), None);
        assert!(run.failures.is_empty());
        assert_eq!(run.annotations.iter().map(|a| a.doc_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(run.stats.ner_requests, 5);
        let mains: usize = run.annotations.iter().map(|a| a.main_mentions().count()).sum();
        assert_eq!(mains, 5);
        assert_eq!(run.stats.re_requests, mains);
        // "No" is shared by fever and chills.
        let a = &run.annotations[0];
        assert_eq!(a.relations.iter().filter(|r| r.label == Mo::Negation).count(), 2);
        assert_eq!(a.mentions.iter().filter(|m| m.surface == "No").count(), 1);
        for (set, doc) in run.annotations.iter().zip(&docs) {
            assert!(crate::schema::validate(set, doc).is_empty());
            for m in &set.mentions {
                assert!(doc.host_sentence(m.start, m.end).is_some());
            }
        }
        // Sequential and concurrent runs agree.
        let mut seq = cfg();
        seq.generation.batch_size = 1;
        assert_eq!(annotate_batch(&docs, &b, &seq, None).annotations, run.annotations);
    }

    #[test]
    fn gold_mode_uses_supplied_mains() {
        let (docs, b) = corpus();
        let gold = annotate_batch(&docs, &b, &cfg(), None).annotations;
        let mut c = cfg();
        c.re_input = ReInput::Gold;
        let run = annotate_batch(&docs, &b, &c, Some(&gold));
        assert_eq!(run.stats.ner_requests, 0);
        assert_eq!(run.annotations, gold);
        let missing = annotate_batch(&docs, &b, &c, Some(&gold[..1]));
        assert_eq!(missing.failures.len(), 2);
    }

    /// Fails the first call with a transport error, then delegates.
    struct Flaky<B> {
        inner: B,
        failed: AtomicBool,
    }

    impl<B: Backend> Backend for Flaky<B> {
        fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            if !self.failed.swap(true, Ordering::SeqCst) {
                return Err(BackendError::Transport("connection reset".into()));
            }
            self.inner.generate(req)
        }
        fn identity(&self) -> String {
            "flaky".into()
        }
    }

    #[test]
    fn flaky_backend_retries_once() {
        let (docs, b) = corpus();
        let reliable = annotate_batch(&docs, &b, &cfg(), None);
        let flaky = Flaky { inner: b, failed: AtomicBool::new(false) };
        let run = annotate_batch(&docs, &flaky, &cfg(), None);
        assert_eq!(run.annotations, reliable.annotations);
        assert_eq!(run.stats.retries, 1);
        assert!(run.failures.is_empty());
    }

    struct Down;

    impl Backend for Down {
        fn generate(&self, _: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
            Err(BackendError::Transport("refused".into()))
        }
        fn identity(&self) -> String {
            "down".into()
        }
    }

    #[test]
    fn unreachable_backend_fails_every_document() {
        let (docs, _) = corpus();
        let run = annotate_batch(&docs, &Down, &cfg(), None);
        assert_eq!(run.failures.len(), 3);
        assert!(run.failures.iter().all(|f| f.backend_unavailable));
        assert!(run.annotations.iter().all(|a| a.mentions.is_empty()));
    }

    #[test]
    fn protocol_errors_are_not_retried() {
        let doc = Document::segmented("d", "Fever.");
        let b = Scripted(|_: (crate::spanmark::PromptTask, &str)| Err(BackendError::Status { code: 400 }));
        let err = run_ner(&doc, &b, &cfg()).unwrap_err();
        assert!(matches!(err, PipelineError::Backend(_)));
    }
}
