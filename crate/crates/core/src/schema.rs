//! Entity and relation taxonomy plus the document/annotation data model.
//!
//! Four main entity types (problem, test, drug, treatment) are extracted
//! first; sixteen modifier types are then attached to them. A relation's
//! label is always the modifier's own type, and which modifiers a main entity
//! may carry is fixed by [`permitted_modifiers`].

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::text::CharIndex;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown {what} name `{name}`")]
pub struct UnknownName {
    pub what: &'static str,
    pub name: String,
}

macro_rules! wire_enum {
    ($(#[$meta:meta])* $name:ident, $what:literal, { $($variant:ident => $wire:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            /// Canonical lowercase wire name.
            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $wire),+
                }
            }
        }

        impl FromStr for $name {
            type Err = UnknownName;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($wire => Ok($name::$variant),)+
                    _ => Err(UnknownName { what: $what, name: s.to_string() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

wire_enum!(
    /// The four main clinical entity types.
    MainEntityType, "main entity", {
        Problem => "problem",
        Test => "test",
        Drug => "drug",
        Treatment => "treatment",
    }
);

wire_enum!(
    /// Modifier entity types. The wire names are the `class` attributes used
    /// in the prompt templates.
    ModifierType, "modifier", {
        Negation => "negation",
        Temporal => "temporal",
        Severity => "severity",
        Condition => "condition",
        Uncertain => "uncertain",
        Subject => "subject",
        BodyLoc => "bodyloc",
        Course => "course",
        LabValue => "labvalue",
        ReferenceRange => "reference_range",
        Strength => "strength",
        Dosage => "dosage",
        Duration => "duration",
        Form => "form",
        Frequency => "frequency",
        Route => "route",
    }
);

impl MainEntityType {
    /// Human-readable label used in report tables.
    pub fn display_label(self) -> &'static str {
        match self {
            MainEntityType::Problem => "Problem",
            MainEntityType::Test => "Test",
            MainEntityType::Drug => "Drug",
            MainEntityType::Treatment => "Other Treatment",
        }
    }

    /// Order in which the NER markup guide lists the classes.
    pub const PROMPT_ORDER: &'static [MainEntityType] = &[
        MainEntityType::Problem,
        MainEntityType::Treatment,
        MainEntityType::Test,
        MainEntityType::Drug,
    ];
}

impl ModifierType {
    pub fn display_label(self) -> &'static str {
        match self {
            ModifierType::Negation => "Negation",
            ModifierType::Temporal => "Temporal",
            ModifierType::Severity => "Severity",
            ModifierType::Condition => "Condition",
            ModifierType::Uncertain => "Certainty",
            ModifierType::Subject => "Subject",
            ModifierType::BodyLoc => "Body location",
            ModifierType::Course => "Course",
            ModifierType::LabValue => "Lab value",
            ModifierType::ReferenceRange => "Reference range",
            ModifierType::Strength => "Strength",
            ModifierType::Dosage => "Dosage",
            ModifierType::Duration => "Duration",
            ModifierType::Form => "Form",
            ModifierType::Frequency => "Frequency",
            ModifierType::Route => "Route",
        }
    }
}

use MainEntityType as M;
use ModifierType as Mod;

const PROBLEM_MODIFIERS: &[ModifierType] = &[
    Mod::Uncertain,
    Mod::Condition,
    Mod::Subject,
    Mod::Negation,
    Mod::BodyLoc,
    Mod::Severity,
    Mod::Temporal,
    Mod::Course,
];
const TEST_MODIFIERS: &[ModifierType] = &[
    Mod::LabValue,
    Mod::ReferenceRange,
    Mod::Negation,
    Mod::Temporal,
];
const DRUG_MODIFIERS: &[ModifierType] = &[
    Mod::Form,
    Mod::Frequency,
    Mod::Dosage,
    Mod::Duration,
    Mod::Strength,
    Mod::Route,
    Mod::Negation,
    Mod::Temporal,
];
const TREATMENT_MODIFIERS: &[ModifierType] = &[Mod::Temporal, Mod::Negation];

/// Modifiers a main entity type may carry, in prompt-template order.
pub fn permitted_modifiers(t: MainEntityType) -> &'static [ModifierType] {
    match t {
        M::Problem => PROBLEM_MODIFIERS,
        M::Test => TEST_MODIFIERS,
        M::Drug => DRUG_MODIFIERS,
        M::Treatment => TREATMENT_MODIFIERS,
    }
}

pub fn is_permitted(main: MainEntityType, modifier: ModifierType) -> bool {
    permitted_modifiers(main).contains(&modifier)
}

/// Main types in corpus-statistics row order.
pub const STATS_MAIN_ORDER: &[MainEntityType] = &[M::Problem, M::Test, M::Drug, M::Treatment];

/// Same rows as [`permitted_modifiers`], ordered the way corpus statistics
/// tables list them.
pub fn stats_modifier_order(t: MainEntityType) -> &'static [ModifierType] {
    match t {
        M::Problem => &[
            Mod::Negation,
            Mod::Temporal,
            Mod::Severity,
            Mod::Condition,
            Mod::Uncertain,
            Mod::Subject,
            Mod::BodyLoc,
            Mod::Course,
        ],
        M::Test => &[Mod::Negation, Mod::Temporal, Mod::LabValue, Mod::ReferenceRange],
        M::Drug => &[
            Mod::Negation,
            Mod::Temporal,
            Mod::Strength,
            Mod::Dosage,
            Mod::Duration,
            Mod::Form,
            Mod::Frequency,
            Mod::Route,
        ],
        M::Treatment => &[Mod::Negation, Mod::Temporal],
    }
}

/// What a mention denotes: a main entity or a modifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    Main(MainEntityType),
    Modifier(ModifierType),
}

impl EntityKind {
    /// Wire name. Main and modifier names never collide, so the bare class
    /// name identifies the kind.
    pub fn name(self) -> &'static str {
        match self {
            EntityKind::Main(t) => t.name(),
            EntityKind::Modifier(t) => t.name(),
        }
    }

    pub fn as_main(self) -> Option<MainEntityType> {
        match self {
            EntityKind::Main(t) => Some(t),
            EntityKind::Modifier(_) => None,
        }
    }

    pub fn as_modifier(self) -> Option<ModifierType> {
        match self {
            EntityKind::Modifier(t) => Some(t),
            EntityKind::Main(_) => None,
        }
    }

    pub fn is_main(self) -> bool {
        matches!(self, EntityKind::Main(_))
    }
}

impl FromStr for EntityKind {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(t) = s.parse::<MainEntityType>() {
            return Ok(EntityKind::Main(t));
        }
        s.parse::<ModifierType>()
            .map(EntityKind::Modifier)
            .map_err(|_| UnknownName { what: "entity class", name: s.to_string() })
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for EntityKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EntityKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open char range `[start, end)` of a sentence within its document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sentence {
    pub start: usize,
    pub end: usize,
}

impl Sentence {
    pub fn contains(&self, start: usize, end: usize) -> bool {
        self.start <= start && end <= self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocumentError {
    #[error("sentence {index} has range {start}..{end} outside a text of {len} chars")]
    SentenceOutOfRange { index: usize, start: usize, end: usize, len: usize },
    #[error("sentence {index} overlaps or precedes its predecessor")]
    SentenceOrder { index: usize },
}

/// A clinical note: raw text plus its sentence segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    id: String,
    text: String,
    sentences: Vec<Sentence>,
    index: CharIndex,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        sentences: Vec<Sentence>,
    ) -> Result<Self, DocumentError> {
        let text = text.into();
        let index = CharIndex::new(&text);
        let len = index.char_len();
        let mut prev_end = 0;
        for (i, s) in sentences.iter().enumerate() {
            if !(s.start < s.end && s.end <= len) {
                return Err(DocumentError::SentenceOutOfRange { index: i, start: s.start, end: s.end, len });
            }
            if i > 0 && s.start < prev_end {
                return Err(DocumentError::SentenceOrder { index: i });
            }
            prev_end = s.end;
        }
        Ok(Self { id: id.into(), text, sentences, index })
    }

    /// Build a document and segment it with the default rule-based splitter.
    pub fn segmented(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let sentences = crate::pipeline::segment(&text);
        Self::new(id, text, sentences).expect("segmenter yields valid sentences")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn char_len(&self) -> usize {
        self.index.char_len()
    }

    /// Text of `[start, end)` in char offsets.
    pub fn slice(&self, start: usize, end: usize) -> Option<&str> {
        self.index.slice(&self.text, start, end)
    }

    pub fn sentence_text(&self, s: &Sentence) -> &str {
        self.slice(s.start, s.end).expect("sentence validated at construction")
    }

    /// The sentence that fully contains `[start, end)`, if any.
    pub fn host_sentence(&self, start: usize, end: usize) -> Option<&Sentence> {
        let i = self.sentences.partition_point(|s| s.end <= start);
        self.sentences.get(i).filter(|s| s.contains(start, end))
    }
}

/// A typed char span in a document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: EntityKind,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntityMention {
    pub fn new(
        id: impl Into<String>,
        kind: EntityKind,
        start: usize,
        end: usize,
        surface: impl Into<String>,
    ) -> Self {
        Self { id: id.into(), kind, start, end, surface: surface.into() }
    }

    pub fn overlaps(&self, other: &EntityMention) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Link from a main mention to one of its modifiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub main: String,
    pub modifier: String,
    pub label: ModifierType,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("duplicate mention id `{0}`")]
    DuplicateMentionId(String),
    #[error("relation refers to unknown mention `{0}`")]
    DanglingRelation(String),
    #[error("duplicate relation ({main}, {modifier}, {label})")]
    DuplicateRelation { main: String, modifier: String, label: ModifierType },
}

/// All mentions and relations for one document.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotationSet {
    pub doc_id: String,
    pub mentions: Vec<EntityMention>,
    pub relations: Vec<Relation>,
}

impl AnnotationSet {
    pub fn empty(doc_id: impl Into<String>) -> Self {
        Self { doc_id: doc_id.into(), mentions: Vec::new(), relations: Vec::new() }
    }

    /// Checked constructor: unique mention ids, resolvable relation endpoints
    /// and no duplicate relation triples.
    pub fn new(
        doc_id: impl Into<String>,
        mentions: Vec<EntityMention>,
        relations: Vec<Relation>,
    ) -> Result<Self, SchemaError> {
        let mut set = Self::empty(doc_id);
        for m in mentions {
            set.push_mention(m)?;
        }
        for r in relations {
            set.push_relation(r)?;
        }
        Ok(set)
    }

    pub fn push_mention(&mut self, mention: EntityMention) -> Result<(), SchemaError> {
        if self.mention(&mention.id).is_some() {
            return Err(SchemaError::DuplicateMentionId(mention.id));
        }
        self.mentions.push(mention);
        Ok(())
    }

    pub fn push_relation(&mut self, relation: Relation) -> Result<(), SchemaError> {
        for id in [&relation.main, &relation.modifier] {
            if self.mention(id).is_none() {
                return Err(SchemaError::DanglingRelation(id.clone()));
            }
        }
        if self.relations.contains(&relation) {
            return Err(SchemaError::DuplicateRelation {
                main: relation.main,
                modifier: relation.modifier,
                label: relation.label,
            });
        }
        self.relations.push(relation);
        Ok(())
    }

    pub fn mention(&self, id: &str) -> Option<&EntityMention> {
        self.mentions.iter().find(|m| m.id == id)
    }

    pub fn main_mentions(&self) -> impl Iterator<Item = &EntityMention> {
        self.mentions.iter().filter(|m| m.kind.is_main())
    }

    pub fn mention_map(&self) -> HashMap<&str, &EntityMention> {
        self.mentions.iter().map(|m| (m.id.as_str(), m)).collect()
    }
}

/// A broken invariant found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DocIdMismatch { expected: String, found: String },
    DuplicateMentionId { id: String },
    EmptySpan { id: String },
    OffsetOutOfRange { id: String, start: usize, end: usize, len: usize },
    SurfaceMismatch { id: String, surface: String, slice: String },
    DanglingRelation { id: String },
    MainEndpointNotMain { id: String },
    ModifierEndpointNotModifier { id: String },
    LabelMismatch { modifier: String, label: ModifierType },
    SchemaForbiddenPair { main: MainEntityType, label: ModifierType },
    DuplicateRelation { main: String, modifier: String, label: ModifierType },
}

/// Every invariant violation of `set` against `document`, sorted. Empty iff
/// the set is well-formed.
pub fn validate(set: &AnnotationSet, document: &Document) -> Vec<Violation> {
    let mut out = Vec::new();
    if set.doc_id != document.id() {
        out.push(Violation::DocIdMismatch {
            expected: document.id().to_string(),
            found: set.doc_id.clone(),
        });
    }

    let mut by_id: HashMap<&str, &EntityMention> = HashMap::new();
    let mut dup_ids = BTreeSet::new();
    for m in &set.mentions {
        if by_id.insert(m.id.as_str(), m).is_some() {
            dup_ids.insert(m.id.clone());
        }
        let len = document.char_len();
        if m.start >= m.end {
            out.push(Violation::EmptySpan { id: m.id.clone() });
        } else if m.end > len {
            out.push(Violation::OffsetOutOfRange { id: m.id.clone(), start: m.start, end: m.end, len });
        } else {
            let slice = document.slice(m.start, m.end).unwrap_or_default();
            if slice != m.surface {
                out.push(Violation::SurfaceMismatch {
                    id: m.id.clone(),
                    surface: m.surface.clone(),
                    slice: slice.to_string(),
                });
            }
        }
    }
    out.extend(dup_ids.into_iter().map(|id| Violation::DuplicateMentionId { id }));

    let mut seen = HashSet::new();
    for r in &set.relations {
        if !seen.insert(r) {
            out.push(Violation::DuplicateRelation {
                main: r.main.clone(),
                modifier: r.modifier.clone(),
                label: r.label,
            });
        }
        let main = by_id.get(r.main.as_str());
        let modifier = by_id.get(r.modifier.as_str());
        for (id, found) in [(&r.main, main), (&r.modifier, modifier)] {
            if found.is_none() {
                out.push(Violation::DanglingRelation { id: id.clone() });
            }
        }
        let main_type = match main.map(|m| m.kind) {
            Some(EntityKind::Main(t)) => Some(t),
            Some(EntityKind::Modifier(_)) => {
                out.push(Violation::MainEndpointNotMain { id: r.main.clone() });
                None
            }
            None => None,
        };
        match modifier.map(|m| m.kind) {
            Some(EntityKind::Modifier(t)) if t != r.label => {
                out.push(Violation::LabelMismatch { modifier: r.modifier.clone(), label: r.label });
            }
            Some(EntityKind::Main(_)) => {
                out.push(Violation::ModifierEndpointNotModifier { id: r.modifier.clone() });
            }
            _ => {}
        }
        if let Some(t) = main_type {
            if !is_permitted(t, r.label) {
                out.push(Violation::SchemaForbiddenPair { main: t, label: r.label });
            }
        }
    }
    out.sort();
    out.dedup();
    out
}
