//! BRAT-style standoff with T (text-bound) and R (relation) lines only.
//!
//! Grammar (one record per line, fields separated by TAB):
//!
//! ```text
//! T<n>\t<type> <start> <end>\t<surface>
//! R<n>\t<label> Arg1:<T-id> Arg2:<T-id>
//! ```
//!
//! `<type>` and `<label>` are schema names, offsets are Unicode scalar
//! indices into the sibling `.txt`, and line breaks inside a surface are
//! written as spaces. Blank lines and `#` comment lines are skipped on import.

use std::collections::HashMap;

use regex::Regex;
use std::sync::OnceLock;
use thiserror::Error;

use crate::schema::{AnnotationSet, Document, EntityKind, EntityMention, ModifierType, Relation, SchemaError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StandoffError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: relation references unknown mention `{id}`")]
    DanglingReference { line: usize, id: String },
    #[error("mention {id}: surface {surface:?} does not match document text {slice:?}")]
    SurfaceMismatch { id: String, surface: String, slice: String },
    #[error("mention {id}: offsets {start}..{end} fall outside the document")]
    OutOfRange { id: String, start: usize, end: usize },
    #[error("mention id `{0}` is not a standoff T id")]
    InvalidId(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

fn t_id() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^T[0-9]+$").unwrap())
}

fn flatten(s: &str) -> String {
    s.replace(['\r', '\n'], " ")
}

/// Render a set as standoff. Mention ids must already be `T<n>`.
pub fn to_standoff(set: &AnnotationSet) -> Result<String, StandoffError> {
    let mut out = String::new();
    for m in &set.mentions {
        if !t_id().is_match(&m.id) {
            return Err(StandoffError::InvalidId(m.id.clone()));
        }
        out.push_str(&format!("{}\t{} {} {}\t{}\n", m.id, m.kind.name(), m.start, m.end, flatten(&m.surface)));
    }
    for (i, r) in set.relations.iter().enumerate() {
        out.push_str(&format!("R{}\t{} Arg1:{} Arg2:{}\n", i + 1, r.label.name(), r.main, r.modifier));
    }
    Ok(out)
}

fn malformed(line: usize, message: impl Into<String>) -> StandoffError {
    StandoffError::Malformed { line, message: message.into() }
}

/// Parse standoff for `document`, checking every surface against its text.
pub fn from_standoff(src: &str, document: &Document) -> Result<AnnotationSet, StandoffError> {
    let mut mentions = Vec::new();
    let mut relations = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut pending: Vec<(usize, Relation)> = Vec::new();

    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut cols = raw.splitn(3, '\t');
        let id = cols.next().unwrap_or_default();
        let body = cols.next().ok_or_else(|| malformed(line, "missing tab-separated fields"))?;
        if t_id().is_match(id) {
            let surface = cols.next().ok_or_else(|| malformed(line, "T line needs a surface column"))?;
            let fields: Vec<&str> = body.split(' ').collect();
            if fields.len() != 3 {
                return Err(malformed(line, "expected `<type> <start> <end>` (discontinuous spans unsupported)"));
            }
            let kind: EntityKind = fields[0].parse().map_err(|e| malformed(line, format!("{e}")))?;
            let start: usize = fields[1].parse().map_err(|_| malformed(line, "bad start offset"))?;
            let end: usize = fields[2].parse().map_err(|_| malformed(line, "bad end offset"))?;
            let slice = document
                .slice(start, end)
                .filter(|_| start < end)
                .ok_or_else(|| StandoffError::OutOfRange { id: id.to_string(), start, end })?;
            if flatten(slice) != surface {
                return Err(StandoffError::SurfaceMismatch {
                    id: id.to_string(),
                    surface: surface.to_string(),
                    slice: slice.to_string(),
                });
            }
            ids.insert(id.to_string(), line);
            mentions.push(EntityMention::new(id, kind, start, end, slice));
        } else if id.starts_with('R') && id[1..].chars().all(|c| c.is_ascii_digit()) && id.len() > 1 {
            let fields: Vec<&str> = body.split_whitespace().collect();
            let [label, a1, a2] = fields[..] else {
                return Err(malformed(line, "expected `<label> Arg1:<id> Arg2:<id>`"));
            };
            let label: ModifierType = label.parse().map_err(|e| malformed(line, format!("{e}")))?;
            let main = a1.strip_prefix("Arg1:").ok_or_else(|| malformed(line, "missing Arg1:"))?;
            let modifier = a2.strip_prefix("Arg2:").ok_or_else(|| malformed(line, "missing Arg2:"))?;
            pending.push((line, Relation { main: main.into(), modifier: modifier.into(), label }));
        } else {
            return Err(malformed(line, format!("unsupported record `{id}` (only T and R lines)")));
        }
    }
    for (line, r) in pending {
        for id in [&r.main, &r.modifier] {
            if !ids.contains_key(id) {
                return Err(StandoffError::DanglingReference { line, id: id.clone() });
            }
        }
        relations.push(r);
    }
    Ok(AnnotationSet::new(document.id(), mentions, relations)?)
}
