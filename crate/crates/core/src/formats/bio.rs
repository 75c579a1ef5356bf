//! BIO token tagging for sequence-labeling baselines.
//!
//! The tokenizer is frozen: a token is a decimal number with internal `.` or
//! `,` groups (`10.6`, `1,000`), a run of letters/digits/underscore, or any
//! other single non-whitespace char. Offsets are document char indices.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;
use thiserror::Error;

use crate::schema::{AnnotationSet, Document, EntityKind, EntityMention, Sentence};
use crate::text::CharIndex;

pub const TOKEN_PATTERN: &str = r"\d+(?:[.,]\d+)+|[\p{L}\p{N}_]+|[^\s]";

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(TOKEN_PATTERN).expect("valid token pattern"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Tokens of `text`, with char offsets shifted by `offset`.
pub fn tokenize(text: &str, offset: usize) -> Vec<Token> {
    let idx = CharIndex::new(text);
    token_re()
        .find_iter(text)
        .map(|m| Token {
            text: m.as_str().to_string(),
            start: offset + idx.char_offset(m.start()).expect("match starts on a char boundary"),
            end: offset + idx.char_offset(m.end()).expect("match ends on a char boundary"),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BioLabel {
    O,
    B(EntityKind),
    I(EntityKind),
}

impl fmt::Display for BioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioLabel::O => f.write_str("O"),
            BioLabel::B(k) => write!(f, "B-{k}"),
            BioLabel::I(k) => write!(f, "I-{k}"),
        }
    }
}

impl FromStr for BioLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(BioLabel::O);
        }
        let (prefix, kind) = s.split_once('-').ok_or_else(|| format!("bad BIO label `{s}`"))?;
        let kind: EntityKind = kind.parse().map_err(|e| format!("bad BIO label `{s}`: {e}"))?;
        match prefix {
            "B" => Ok(BioLabel::B(kind)),
            "I" => Ok(BioLabel::I(kind)),
            _ => Err(format!("bad BIO label `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioSequence {
    pub tokens: Vec<Token>,
    pub labels: Vec<BioLabel>,
}

impl BioSequence {
    /// Whether every `I-x` continues a `B-x`/`I-x`.
    pub fn is_well_formed(&self) -> bool {
        self.tokens.len() == self.labels.len()
            && self.labels.iter().enumerate().all(|(i, l)| match l {
                BioLabel::I(k) => i > 0 && matches!(self.labels[i - 1], BioLabel::B(p) | BioLabel::I(p) if p == *k),
                _ => true,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BioError {
    #[error("mentions `{0}` and `{1}` overlap")]
    OverlappingMentions(String, String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BioWarning {
    /// Span boundaries were widened to token boundaries.
    Snapped { id: String, start: usize, end: usize },
    /// Span covered no token, or only tokens already claimed after snapping.
    Dropped { id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BioSpan {
    pub kind: EntityKind,
    pub start: usize,
    pub end: usize,
}

/// Label the tokens of `sentence`. Mentions not inside the sentence are
/// ignored; spans that cut through tokens are snapped outward with a warning.
pub fn spans_to_bio(
    document: &Document,
    sentence: &Sentence,
    mentions: &[EntityMention],
) -> Result<(BioSequence, Vec<BioWarning>), BioError> {
    let mut inside: Vec<&EntityMention> =
        mentions.iter().filter(|m| sentence.contains(m.start, m.end) && m.start < m.end).collect();
    inside.sort_by_key(|m| (m.start, m.end));
    for w in inside.windows(2) {
        if w[0].overlaps(w[1]) {
            return Err(BioError::OverlappingMentions(w[0].id.clone(), w[1].id.clone()));
        }
    }

    let tokens = tokenize(document.sentence_text(sentence), sentence.start);
    let mut labels = vec![BioLabel::O; tokens.len()];
    let mut warnings = Vec::new();
    for m in inside {
        let covered: Vec<usize> =
            (0..tokens.len()).filter(|&i| tokens[i].start < m.end && m.start < tokens[i].end).collect();
        if covered.is_empty() || covered.iter().any(|&i| labels[i] != BioLabel::O) {
            warnings.push(BioWarning::Dropped { id: m.id.clone() });
            continue;
        }
        let (first, last) = (covered[0], covered[covered.len() - 1]);
        if tokens[first].start != m.start || tokens[last].end != m.end {
            warnings.push(BioWarning::Snapped { id: m.id.clone(), start: tokens[first].start, end: tokens[last].end });
        }
        labels[first] = BioLabel::B(m.kind);
        labels[first + 1..=last].fill(BioLabel::I(m.kind));
    }
    Ok((BioSequence { tokens, labels }, warnings))
}

/// Spans encoded by a label sequence. A stray `I-x` starts a new span.
pub fn bio_to_spans(seq: &BioSequence) -> Vec<BioSpan> {
    let mut out: Vec<BioSpan> = Vec::new();
    let mut open: Option<BioSpan> = None;
    for (tok, label) in seq.tokens.iter().zip(&seq.labels) {
        match *label {
            BioLabel::I(k) if open.is_some_and(|s| s.kind == k) => {
                open.as_mut().expect("checked").end = tok.end;
            }
            BioLabel::B(k) | BioLabel::I(k) => {
                out.extend(open.take());
                open = Some(BioSpan { kind: k, start: tok.start, end: tok.end });
            }
            BioLabel::O => out.extend(open.take()),
        }
    }
    out.extend(open);
    out
}

/// BIO sequences for every sentence, over the set's main mentions.
pub fn document_to_bio(
    document: &Document,
    set: &AnnotationSet,
) -> Result<(Vec<BioSequence>, Vec<BioWarning>), BioError> {
    let mains: Vec<EntityMention> = set.main_mentions().cloned().collect();
    let mut seqs = Vec::new();
    let mut warnings = Vec::new();
    for s in document.sentences() {
        let (seq, w) = spans_to_bio(document, s, &mains)?;
        seqs.push(seq);
        warnings.extend(w);
    }
    Ok((seqs, warnings))
}

/// Annotation set (mentions `T1`, `T2`, … in order) from BIO sequences.
pub fn document_from_bio(document: &Document, seqs: &[BioSequence]) -> AnnotationSet {
    let mut set = AnnotationSet::empty(document.id());
    for span in seqs.iter().flat_map(bio_to_spans) {
        let surface = document.slice(span.start, span.end).unwrap_or_default();
        let id = format!("T{}", set.mentions.len() + 1);
        set.mentions.push(EntityMention::new(id, span.kind, span.start, span.end, surface));
    }
    set
}

/// `token\tstart\tend\tlabel` lines; a blank line ends each sentence.
pub fn write_bio_tsv(seqs: &[BioSequence]) -> String {
    let mut out = String::new();
    for seq in seqs {
        for (t, l) in seq.tokens.iter().zip(&seq.labels) {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", t.text, t.start, t.end, l));
        }
        out.push('\n');
    }
    out
}

pub fn read_bio_tsv(src: &str) -> Result<Vec<BioSequence>, BioError> {
    let mut seqs = Vec::new();
    let mut cur = BioSequence { tokens: Vec::new(), labels: Vec::new() };
    for (i, line) in src.lines().enumerate() {
        let bad = |message: String| BioError::Malformed { line: i + 1, message };
        if line.is_empty() {
            if !cur.tokens.is_empty() {
                seqs.push(std::mem::replace(&mut cur, BioSequence { tokens: Vec::new(), labels: Vec::new() }));
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [text, start, end, label] = cols[..] else {
            return Err(bad(format!("expected 4 tab-separated columns, found {}", cols.len())));
        };
        let start = start.parse().map_err(|_| bad("bad start offset".into()))?;
        let end = end.parse().map_err(|_| bad("bad end offset".into()))?;
        cur.tokens.push(Token { text: text.to_string(), start, end });
        cur.labels.push(label.parse().map_err(bad)?);
    }
    if !cur.tokens.is_empty() {
        seqs.push(cur);
    }
    Ok(seqs)
}
