//! Canonical JSON: sorted keys, explicit schema version, two-space indent,
//! trailing newline.

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::schema::{AnnotationSet, EntityMention, Relation, SchemaError};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JsonError {
    #[error("unsupported schema_version {found:?} (expected {SCHEMA_VERSION})")]
    SchemaVersionMismatch { found: Option<String> },
    #[error("malformed annotation JSON: {0}")]
    MalformedJson(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Wire {
    #[allow(dead_code)]
    schema_version: u64,
    doc_id: String,
    mentions: Vec<EntityMention>,
    relations: Vec<Relation>,
}

/// The canonical JSON value of a set. Object keys are sorted because
/// `serde_json::Map` is ordered by key.
pub fn to_value(set: &AnnotationSet) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "doc_id": set.doc_id,
        "mentions": set.mentions,
        "relations": set.relations,
    })
}

pub fn to_json(set: &AnnotationSet) -> String {
    let mut s = serde_json::to_string_pretty(&to_value(set)).expect("annotation sets always serialize");
    s.push('\n');
    s
}

pub fn from_json(src: &str) -> Result<AnnotationSet, JsonError> {
    let value: Value = serde_json::from_str(src).map_err(|e| JsonError::MalformedJson(e.to_string()))?;
    from_value(value)
}

pub fn from_value(value: Value) -> Result<AnnotationSet, JsonError> {
    match value.get("schema_version") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
        other => return Err(JsonError::SchemaVersionMismatch { found: other.map(|v| v.to_string()) }),
    }
    let wire: Wire = serde_json::from_value(value).map_err(|e| JsonError::MalformedJson(e.to_string()))?;
    Ok(AnnotationSet::new(wire.doc_id, wire.mentions, wire.relations)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{EntityKind, MainEntityType as M, ModifierType as Mo};

    fn hgb() -> AnnotationSet {
        AnnotationSet::new(
            "s1",
            vec![
                EntityMention::new("T1", EntityKind::Main(M::Test), 0, 3, "Hgb"),
                EntityMention::new("T2", EntityKind::Modifier(Mo::LabValue), 4, 16, "10.6 gm / dL"),
            ],
            vec![Relation { main: "T1".into(), modifier: "T2".into(), label: Mo::LabValue }],
        )
        .unwrap()
    }

    #[test]
    fn empty_set_is_minimal() {
        assert_eq!(
            to_json(&AnnotationSet::empty("d")),
            "{\n  \"doc_id\": \"d\",\n  \"mentions\": [],\n  \"relations\": [],\n  \"schema_version\": 1\n}\n"
        );
    }

    #[test]
    fn hgb_roundtrip_and_key_order() {
        let s = to_json(&hgb());
        assert_eq!(from_json(&s).unwrap(), hgb());
        let first_mention = s.find("\"end\"").unwrap();
        assert!(first_mention < s.find("\"id\"").unwrap());
        assert!(s.find("\"start\"").unwrap() < s.find("\"surface\"").unwrap());
        assert!(s.contains("\"type\": \"labvalue\""));
    }

    #[test]
    fn version_and_malformed_errors() {
        let bad = to_json(&hgb()).replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(from_json(&bad), Err(JsonError::SchemaVersionMismatch { .. })));
        assert!(matches!(from_json("{\"doc_id\": \"x\"}"), Err(JsonError::SchemaVersionMismatch { found: None })));
        assert!(matches!(from_json("{"), Err(JsonError::MalformedJson(_))));
        let extra = to_json(&hgb()).replace("\"doc_id\"", "\"extra\": 1, \"doc_id\"");
        assert!(matches!(from_json(&extra), Err(JsonError::MalformedJson(_))));
        let dangling = to_json(&hgb()).replace("\"modifier\": \"T2\"", "\"modifier\": \"T9\"");
        assert!(matches!(from_json(&dangling), Err(JsonError::Schema(_))));
    }
}
