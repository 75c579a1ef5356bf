//! Kiwi clinical information extraction toolkit.
//!
//! - [`schema`]: the four main entity types, 16 modifiers and their permitted
//!   pairings; documents and annotation sets.
//! - [`spanmark`]: Supplementary Table S1 prompts and the `<span class="…">`
//!   markup codec.
//! - [`align`]: re-anchoring generated spans to source offsets.
//! - [`pipeline`]: sentence segmentation and the two-stage NER → RE run
//!   against a pluggable [`Backend`].
//! - [`eval`]: exact/relaxed scoring, bootstrap significance, error
//!   categories and corpus statistics.
//! - [`telemetry`]: GPU-hour, energy, carbon and throughput accounting.
//! - [`formats`]: canonical JSON, standoff and BIO codecs.

pub mod align;
pub mod eval;
pub mod formats;
pub mod pipeline;
pub mod schema;
pub mod spanmark;
pub mod telemetry;
pub mod text;

pub use align::{align_texts, anchor_spans, Alignment, AnchorConfig, AnchorResult};
pub use eval::{
    bootstrap_significance, categorize_errors, corpus_stats, match_mentions, match_relations, score_corpus,
    ErrorBreakdown, MatchCounts, MatchMode, MetricReport, SignificanceReport, StatsTable, Task,
};
pub use pipeline::{
    annotate_batch, mock_backend, run_ner, run_re, segment, Backend, HttpBackend, LexiconBackend, PipelineConfig,
    PipelineRun, ReInput,
};
pub use schema::{
    validate, AnnotationSet, Document, EntityKind, EntityMention, MainEntityType, ModifierType, Relation, Sentence,
};
pub use spanmark::{
    build_ner_prompt, build_re_prompt, decode, encode, template_version, Decoded, DecodedSpan, TaggedText,
};
pub use telemetry::{cost_report, CostReport, EnergyMethod, RunLedger};
