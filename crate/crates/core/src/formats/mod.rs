//! Interchange codecs: canonical JSON (`.kiwi.json`), BRAT-style standoff
//! (`.ann` + sibling `.txt`) and BIO token tagging (`.bio.tsv`).

pub mod bio;
pub mod json;
pub mod standoff;

pub use bio::{
    bio_to_spans, document_from_bio, document_to_bio, read_bio_tsv, spans_to_bio, tokenize, write_bio_tsv, BioError,
    BioLabel, BioSequence, BioSpan, BioWarning, Token,
};
pub use json::{from_json, to_json, JsonError, SCHEMA_VERSION};
pub use standoff::{from_standoff, to_standoff, StandoffError};

/// File extension of canonical JSON annotations.
pub const JSON_EXT: &str = "kiwi.json";
/// File extension of standoff annotations; text lives in a sibling `.txt`.
pub const STANDOFF_EXT: &str = "ann";
/// File extension of BIO token files.
pub const BIO_EXT: &str = "bio.tsv";
