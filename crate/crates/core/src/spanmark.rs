//! Prompt templates and the `<span class="...">` markup dialect.
//!
//! NER prompts ask the model to wrap every main entity of a sentence in a
//! span tag; RE prompts present the sentence with one main entity already
//! tagged and ask for the modifiers related to it. Both directions of the
//! markup are handled here: [`encode`] renders annotations as tagged text and
//! [`decode`] recovers spans from arbitrary model output.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schema::{permitted_modifiers, EntityKind, EntityMention, MainEntityType};
use crate::text::{char_len, CharIndex};

const INPUT_PLACEHOLDER: &str = "{{input}}";
const INPUT_LABEL: &str = "### Input Text:";
const OUTPUT_LABEL: &str = "### Output Text:";

const NER_ASSET: &str = include_str!("../assets/prompts/ner.txt");
const RE_PROBLEM_ASSET: &str = include_str!("../assets/prompts/re_problem.txt");
const RE_TEST_ASSET: &str = include_str!("../assets/prompts/re_test.txt");
const RE_DRUG_ASSET: &str = include_str!("../assets/prompts/re_drug.txt");
const RE_TREATMENT_ASSET: &str = include_str!("../assets/prompts/re_treatment.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptTask {
    Ner,
    Re(MainEntityType),
}

impl PromptTask {
    pub const ALL: [PromptTask; 5] = [
        PromptTask::Ner,
        PromptTask::Re(MainEntityType::Problem),
        PromptTask::Re(MainEntityType::Treatment),
        PromptTask::Re(MainEntityType::Test),
        PromptTask::Re(MainEntityType::Drug),
    ];

    fn asset(self) -> &'static str {
        match self {
            PromptTask::Ner => NER_ASSET,
            PromptTask::Re(MainEntityType::Problem) => RE_PROBLEM_ASSET,
            PromptTask::Re(MainEntityType::Test) => RE_TEST_ASSET,
            PromptTask::Re(MainEntityType::Drug) => RE_DRUG_ASSET,
            PromptTask::Re(MainEntityType::Treatment) => RE_TREATMENT_ASSET,
        }
    }

    /// Classes a model may legitimately emit for this task.
    pub fn vocabulary(self) -> Vocabulary {
        match self {
            PromptTask::Ner => Vocabulary::MainEntities,
            PromptTask::Re(t) => Vocabulary::ModifiersOf(t),
        }
    }
}

/// One of the shipped prompt templates, split into its sections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: PromptTask,
    /// The `### Task` block.
    pub header: String,
    /// Lines of the form `Use <span class="X"> to denote ...`.
    pub markup_guide: String,
    /// Entity definitions; empty for RE templates.
    pub definitions: String,
    pub input_label: &'static str,
    pub output_label: &'static str,
    raw: &'static str,
}

impl PromptTemplate {
    pub fn get(task: PromptTask) -> &'static PromptTemplate {
        static TEMPLATES: OnceLock<Vec<PromptTemplate>> = OnceLock::new();
        let all = TEMPLATES.get_or_init(|| PromptTask::ALL.iter().map(|&t| PromptTemplate::parse(t)).collect());
        all.iter().find(|t| t.task == task).expect("every task has a template")
    }

    fn parse(task: PromptTask) -> Self {
        let raw = task.asset();
        let section = |title: &str| -> String {
            let Some(start) = raw.find(title) else {
                return String::new();
            };
            let body = &raw[start + title.len()..];
            let body = body.strip_prefix('\n').unwrap_or(body);
            let end = body.find("\n\n").unwrap_or(body.len());
            body[..end].to_string()
        };
        let header_end = raw.find("\n\n").expect("template has a task block");
        Self {
            task,
            header: raw[..header_end].to_string(),
            markup_guide: section("### Entity Markup Guides:"),
            definitions: section("### Entity Definitions:"),
            input_label: INPUT_LABEL,
            output_label: OUTPUT_LABEL,
            raw,
        }
    }

    /// Full prompt with `input` substituted.
    pub fn render(&self, input: &str) -> String {
        let (before, after) = self
            .raw
            .split_once(INPUT_PLACEHOLDER)
            .expect("template has an input placeholder");
        let mut out = String::with_capacity(self.raw.len() + input.len());
        out.push_str(before);
        out.push_str(input);
        out.push_str(after);
        out
    }

    /// Class names advertised by the markup guide, in order.
    pub fn guide_classes(&self) -> Vec<String> {
        tag_regex()
            .captures_iter(&self.markup_guide)
            .filter_map(|c| c.get(1).or_else(|| c.get(2)).map(|m| m.as_str().to_string()))
            .collect()
    }
}

/// Hex SHA-256 over all template assets; changes whenever a prompt changes.
pub fn template_version() -> &'static str {
    static VERSION: OnceLock<String> = OnceLock::new();
    VERSION.get_or_init(|| {
        let mut h = Sha256::new();
        for t in PromptTask::ALL {
            h.update(t.asset().as_bytes());
            h.update([0u8]);
        }
        hex::encode(&h.finalize()[..8])
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("input sentence is empty")]
    EmptyInput,
    #[error("mention `{0}` is not a main entity")]
    NotMainEntity(String),
    #[error("mention `{id}` ({start}..{end}) lies outside the sentence")]
    MainOutsideSentence { id: String, start: usize, end: usize },
}

pub fn build_ner_prompt(sentence_text: &str) -> Result<String, PromptError> {
    if sentence_text.is_empty() {
        return Err(PromptError::EmptyInput);
    }
    Ok(PromptTemplate::get(PromptTask::Ner).render(sentence_text))
}

/// RE prompt for `main`, whose document offsets must fall inside the sentence
/// starting at `sentence_start`.
pub fn build_re_prompt(
    sentence_text: &str,
    sentence_start: usize,
    main: &EntityMention,
) -> Result<String, PromptError> {
    if sentence_text.is_empty() {
        return Err(PromptError::EmptyInput);
    }
    let EntityKind::Main(main_type) = main.kind else {
        return Err(PromptError::NotMainEntity(main.id.clone()));
    };
    let len = char_len(sentence_text);
    if main.start < sentence_start || main.end > sentence_start + len || main.start >= main.end {
        return Err(PromptError::MainOutsideSentence { id: main.id.clone(), start: main.start, end: main.end });
    }
    let tagged = encode(sentence_text, std::slice::from_ref(main), sentence_start)
        .expect("single in-range mention always encodes");
    Ok(PromptTemplate::get(PromptTask::Re(main_type)).render(tagged.as_str()))
}

/// Sentence text carrying span markup.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct TaggedText(String);

impl TaggedText {
    pub fn new(raw: impl Into<String>) -> Self {
        Self(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for TaggedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaggedText {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("mentions `{0}` and `{1}` overlap")]
    OverlappingMentions(String, String),
    #[error("mention `{0}` lies outside the sentence or is empty")]
    OutOfRange(String),
}

/// Wrap each mention in a span tag. Offsets are document offsets; the
/// sentence starts at `sentence_start`.
pub fn encode(
    sentence_text: &str,
    mentions: &[EntityMention],
    sentence_start: usize,
) -> Result<TaggedText, EncodeError> {
    let index = CharIndex::new(sentence_text);
    let len = index.char_len();
    let mut sorted: Vec<&EntityMention> = mentions.iter().collect();
    sorted.sort_by_key(|m| (m.start, m.end));
    for m in &sorted {
        if m.start < sentence_start || m.end > sentence_start + len || m.start >= m.end {
            return Err(EncodeError::OutOfRange(m.id.clone()));
        }
    }
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(EncodeError::OverlappingMentions(w[0].id.clone(), w[1].id.clone()));
        }
    }

    let mut out = String::with_capacity(sentence_text.len() + mentions.len() * 32);
    let mut cursor = 0;
    for m in sorted {
        let b0 = index.byte_offset(m.start - sentence_start).unwrap();
        let b1 = index.byte_offset(m.end - sentence_start).unwrap();
        out.push_str(&sentence_text[cursor..b0]);
        out.push_str("<span class=\"");
        out.push_str(m.kind.name());
        out.push_str("\">");
        out.push_str(&sentence_text[b0..b1]);
        out.push_str("</span>");
        cursor = b1;
    }
    out.push_str(&sentence_text[cursor..]);
    Ok(TaggedText(out))
}

/// Which classes the decoder accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vocabulary {
    /// All main and modifier classes.
    Any,
    MainEntities,
    /// The modifiers permitted for one main type.
    ModifiersOf(MainEntityType),
}

impl Vocabulary {
    pub fn accepts(self, kind: EntityKind) -> bool {
        match (self, kind) {
            (Vocabulary::Any, _) => true,
            (Vocabulary::MainEntities, EntityKind::Main(_)) => true,
            (Vocabulary::ModifiersOf(t), EntityKind::Modifier(m)) => permitted_modifiers(t).contains(&m),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    UnknownClass,
    UnclosedTag,
    StrayCloseTag,
    NestedTag,
    EmptySpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ParseDiagnostic {
    pub kind: DiagnosticKind,
    /// Char offset of the offending tag in the raw text.
    pub position: usize,
    pub detail: String,
}

/// A recovered span with offsets into the tag-stripped text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DecodedSpan {
    pub kind: EntityKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Decoded {
    pub plain_text: String,
    pub spans: Vec<DecodedSpan>,
    pub diagnostics: Vec<ParseDiagnostic>,
}

fn tag_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)<span\s+class\s*=\s*(?:"([^"<>]*)"|'([^'<>]*)')\s*>|(</span\s*>)"#).unwrap()
    })
}

/// Decode with every class accepted.
pub fn decode(tagged: &TaggedText) -> Decoded {
    decode_with(tagged.as_str(), Vocabulary::Any)
}

/// Strip span markup from `raw`, returning the recovered spans.
///
/// Never fails. Malformed regions are reported as diagnostics:
/// unknown classes drop the span but keep its text, unclosed tags close at
/// the end of input, stray closing tags are ignored, and a tag opened inside
/// another span is stripped while the outer span is kept.
pub fn decode_with(raw: &str, vocab: Vocabulary) -> Decoded {
    struct Open {
        kind: Option<EntityKind>,
        plain_start: usize,
        raw_pos: usize,
    }

    let mut plain = String::with_capacity(raw.len());
    let mut plain_len = 0usize;
    let mut spans = Vec::new();
    let mut diagnostics = Vec::new();
    let mut open: Option<Open> = None;
    let mut nested = 0usize;

    // Track the raw char position incrementally.
    let mut raw_chars = 0usize;
    let mut last = 0usize;

    for caps in tag_regex().captures_iter(raw) {
        let m = caps.get(0).unwrap();
        let literal = &raw[last..m.start()];
        let n = literal.chars().count();
        plain.push_str(literal);
        plain_len += n;
        raw_chars += n;
        let tag_pos = raw_chars;
        raw_chars += m.as_str().chars().count();
        last = m.end();

        if caps.get(3).is_some() {
            if nested > 0 {
                nested -= 1;
                continue;
            }
            match open.take() {
                Some(o) => {
                    if let Some(kind) = o.kind {
                        if plain_len > o.plain_start {
                            spans.push(DecodedSpan { kind, start: o.plain_start, end: plain_len });
                        } else {
                            diagnostics.push(ParseDiagnostic {
                                kind: DiagnosticKind::EmptySpan,
                                position: o.raw_pos,
                                detail: format!("empty `{}` span", kind.name()),
                            });
                        }
                    }
                }
                None => diagnostics.push(ParseDiagnostic {
                    kind: DiagnosticKind::StrayCloseTag,
                    position: tag_pos,
                    detail: "closing tag without an open span".into(),
                }),
            }
            continue;
        }

        let class = caps.get(1).or_else(|| caps.get(2)).map(|c| c.as_str()).unwrap_or("");
        let class = class.trim().to_lowercase();
        if open.is_some() {
            nested += 1;
            diagnostics.push(ParseDiagnostic {
                kind: DiagnosticKind::NestedTag,
                position: tag_pos,
                detail: format!("`{class}` tag inside an open span was stripped"),
            });
            continue;
        }
        let kind = class.parse::<EntityKind>().ok().filter(|k| vocab.accepts(*k));
        if kind.is_none() {
            diagnostics.push(ParseDiagnostic {
                kind: DiagnosticKind::UnknownClass,
                position: tag_pos,
                detail: format!("class `{class}` is not valid here"),
            });
        }
        open = Some(Open { kind, plain_start: plain_len, raw_pos: tag_pos });
    }
    let tail = &raw[last..];
    plain.push_str(tail);
    plain_len += tail.chars().count();

    if let Some(o) = open {
        diagnostics.push(ParseDiagnostic {
            kind: DiagnosticKind::UnclosedTag,
            position: o.raw_pos,
            detail: "span closed implicitly at end of text".into(),
        });
        if let Some(kind) = o.kind {
            if plain_len > o.plain_start {
                spans.push(DecodedSpan { kind, start: o.plain_start, end: plain_len });
            }
        }
    }

    Decoded { plain_text: plain, spans, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{MainEntityType as M, ModifierType as Mod};

    fn span(kind: EntityKind, start: usize, end: usize) -> DecodedSpan {
        DecodedSpan { kind, start, end }
    }

    #[test]
    fn ner_prompt_substitutes_input() {
        let p = build_ner_prompt("Ortho Micronor 0.35 MG ...").unwrap();
        assert!(p.contains("\n### Input Text: Ortho Micronor 0.35 MG ...\n"));
        assert!(p.ends_with("### Output Text:"));
        assert_eq!(build_ner_prompt(""), Err(PromptError::EmptyInput));
    }

    #[test]
    fn ner_guide_lists_each_class_once() {
        let t = PromptTemplate::get(PromptTask::Ner);
        let classes = t.guide_classes();
        assert_eq!(classes, ["problem", "treatment", "test", "drug"]);
        for c in ["problem", "treatment", "test", "drug"] {
            assert_eq!(t.markup_guide.matches(&format!("class=\"{c}\"")).count(), 1);
        }
        assert!(!t.definitions.is_empty());
    }

    #[test]
    fn re_guides_match_permitted_modifiers() {
        for &main in MainEntityType::ALL {
            let t = PromptTemplate::get(PromptTask::Re(main));
            let expected: Vec<String> = permitted_modifiers(main).iter().map(|m| m.name().to_string()).collect();
            assert_eq!(t.guide_classes(), expected, "{main}");
            assert!(t.definitions.is_empty());
        }
    }

    #[test]
    fn re_prompt_wraps_main_entity() {
        let main = EntityMention::new("T1", EntityKind::Main(M::Test), 100, 103, "Hgb");
        let p = build_re_prompt("Hgb 10.6 gm / dL", 100, &main).unwrap();
        assert!(p.contains("### Input Text: <span class=\"test\">Hgb</span> 10.6 gm / dL\n"));
        let modifier = EntityMention::new("T2", EntityKind::Modifier(Mod::LabValue), 104, 116, "10.6 gm / dL");
        assert_eq!(
            build_re_prompt("Hgb 10.6 gm / dL", 100, &modifier),
            Err(PromptError::NotMainEntity("T2".into()))
        );
        let outside = EntityMention::new("T3", EntityKind::Main(M::Test), 0, 3, "Hgb");
        assert!(matches!(
            build_re_prompt("Hgb 10.6 gm / dL", 100, &outside),
            Err(PromptError::MainOutsideSentence { .. })
        ));
    }

    #[test]
    fn encode_examples() {
        let drug = EntityMention::new("T1", EntityKind::Main(M::Drug), 0, 14, "Ortho Micronor");
        assert_eq!(
            encode("Ortho Micronor 0.35 MG", &[drug], 0).unwrap().as_str(),
            r#"<span class="drug">Ortho Micronor</span> 0.35 MG"#
        );
        assert_eq!(encode("plain", &[], 0).unwrap().as_str(), "plain");
        let s = "probable left paravertebral dilated vascular structure";
        let ms = [
            EntityMention::new("b", EntityKind::Modifier(Mod::BodyLoc), 14, 27, "paravertebral"),
            EntityMention::new("a", EntityKind::Modifier(Mod::Uncertain), 0, 8, "probable"),
        ];
        assert_eq!(
            encode(s, &ms, 0).unwrap().as_str(),
            r#"<span class="uncertain">probable</span> left <span class="bodyloc">paravertebral</span> dilated vascular structure"#
        );
    }

    #[test]
    fn encode_rejects_overlap() {
        let ms = [
            EntityMention::new("a", EntityKind::Main(M::Problem), 0, 5, "left "),
            EntityMention::new("b", EntityKind::Main(M::Problem), 2, 8, "ft arm"),
        ];
        assert_eq!(
            encode("left arm", &ms, 0),
            Err(EncodeError::OverlappingMentions("a".into(), "b".into()))
        );
    }

    #[test]
    fn decode_examples() {
        let d = decode(&TaggedText::from(r#"Hgb <span class="labvalue">10.6 gm / dL</span>"#));
        assert_eq!(d.plain_text, "Hgb 10.6 gm / dL");
        assert_eq!(d.spans, vec![span(EntityKind::Modifier(Mod::LabValue), 4, 16)]);
        assert!(d.diagnostics.is_empty());

        let d = decode(&TaggedText::from(r#"<span class="negation">No</span> further intervention was done ."#));
        assert_eq!(d.plain_text, "No further intervention was done .");
        assert_eq!(d.spans, vec![span(EntityKind::Modifier(Mod::Negation), 0, 2)]);

        let d = decode(&TaggedText::from(r#"<span class="banana">x</span>"#));
        assert_eq!(d.plain_text, "x");
        assert!(d.spans.is_empty());
        assert_eq!(d.diagnostics.len(), 1);
        assert_eq!(d.diagnostics[0].kind, DiagnosticKind::UnknownClass);
    }

    #[test]
    fn decode_tolerates_quotes_case_and_padding() {
        let d = decode(&TaggedText::from(r#"<SPAN class = ' Negation '>No</span > fever"#));
        assert_eq!(d.spans, vec![span(EntityKind::Modifier(Mod::Negation), 0, 2)]);
        assert!(d.diagnostics.is_empty());
        let d = decode(&TaggedText::from(r#"<span class=" negation">No</span> x"#));
        assert_eq!(d.spans, vec![span(EntityKind::Modifier(Mod::Negation), 0, 2)]);
    }

    #[test]
    fn decode_recovery_rules() {
        let d = decode(&TaggedText::from(r#"a <span class="drug">b c"#));
        assert_eq!(d.plain_text, "a b c");
        assert_eq!(d.spans, vec![span(EntityKind::Main(M::Drug), 2, 5)]);
        assert_eq!(d.diagnostics[0].kind, DiagnosticKind::UnclosedTag);
        assert_eq!(d.diagnostics[0].position, 2);

        let d = decode(&TaggedText::from("a</span> b"));
        assert_eq!(d.plain_text, "a b");
        assert_eq!(d.diagnostics[0].kind, DiagnosticKind::StrayCloseTag);
        assert_eq!(d.diagnostics[0].position, 1);

        let d = decode(&TaggedText::from(
            r#"<span class="problem">x <span class="drug">y</span> z</span> w"#,
        ));
        assert_eq!(d.plain_text, "x y z w");
        assert_eq!(d.spans, vec![span(EntityKind::Main(M::Problem), 0, 5)]);
        assert_eq!(d.diagnostics.len(), 1);
        assert_eq!(d.diagnostics[0].kind, DiagnosticKind::NestedTag);
    }

    #[test]
    fn vocabulary_restricts_classes() {
        let raw = r#"<span class="test">Hgb</span> <span class="labvalue">10.6</span>"#;
        let d = decode_with(raw, Vocabulary::ModifiersOf(M::Test));
        assert_eq!(d.spans, vec![span(EntityKind::Modifier(Mod::LabValue), 4, 8)]);
        assert_eq!(d.diagnostics.len(), 1);
        let d = decode_with(raw, Vocabulary::ModifiersOf(M::Treatment));
        assert!(d.spans.is_empty());
        assert_eq!(d.diagnostics.len(), 2);
        let d = decode_with(raw, Vocabulary::MainEntities);
        assert_eq!(d.spans, vec![span(EntityKind::Main(M::Test), 0, 3)]);
    }

    #[test]
    fn non_ascii_offsets_are_scalar_values() {
        let d = decode(&TaggedText::from(r#"fièvre <span class="severity">sévère</span>"#));
        assert_eq!(d.spans, vec![span(EntityKind::Modifier(Mod::Severity), 7, 13)]);
    }

    #[test]
    fn template_version_is_stable_hex() {
        let v = template_version();
        assert_eq!(v.len(), 16);
        assert!(v.chars().all(|c| c.is_ascii_hexdigit()));
        assert_eq!(v, template_version());
    }
}
