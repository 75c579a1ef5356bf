//! Reading and writing annotation directories.
//!
//! A corpus directory holds `<id>.txt` notes next to `<id>.kiwi.json`,
//! `<id>.ann` (standoff) or `<id>.bio.tsv` files.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;

use kiwi_core::formats::{
    bio::{document_from_bio, document_to_bio, read_bio_tsv, write_bio_tsv, BioWarning},
    json::{from_json, to_json},
    standoff::{from_standoff, to_standoff},
    BIO_EXT, JSON_EXT, STANDOFF_EXT,
};
use kiwi_core::pipeline::{segment_with, SegmenterConfig};
use kiwi_core::schema::{AnnotationSet, Document};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Canonical `<id>.kiwi.json`.
    Json,
    /// BRAT-style standoff `<id>.ann` plus `<id>.txt`.
    Brat,
    /// Token-per-line BIO `<id>.bio.tsv` (main mentions only).
    Bio,
}

impl Format {
    pub fn ext(self) -> &'static str {
        match self {
            Format::Json => JSON_EXT,
            Format::Brat => STANDOFF_EXT,
            Format::Bio => BIO_EXT,
        }
    }
}

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(path, e))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// `(doc id, path)` for every file in `dir` ending in `.<ext>`, sorted by id.
pub fn list_with_ext(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>, CliError> {
    let suffix = format!(".{ext}");
    let entries = fs::read_dir(dir).map_err(|e| input_err(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| input_err(dir, e))?;
        let path = entry.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if let Some(id) = name.strip_suffix(&suffix) {
            if !id.is_empty() && path.is_file() {
                out.push((id.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Notes to annotate: a single `.txt` file or every `.txt` in a directory.
pub fn read_notes(input: &Path) -> Result<Vec<(String, String)>, CliError> {
    if !input.exists() {
        return Err(CliError::Input(format!("input {} does not exist", input.display())));
    }
    let files = if input.is_dir() {
        list_with_ext(input, "txt")?
    } else {
        let id = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::Input(format!("cannot derive a document id from {}", input.display())))?;
        vec![(id.to_string(), input.to_path_buf())]
    };
    if files.is_empty() {
        return Err(CliError::Input(format!("no .txt notes found in {}", input.display())));
    }
    files.into_iter().map(|(id, p)| Ok((id, read_text(&p)?))).collect()
}

pub fn document(id: &str, text: String, segmenter: &SegmenterConfig) -> Document {
    let sentences = segment_with(&text, segmenter);
    Document::new(id, text, sentences).expect("segmenter output is valid")
}

fn note_text(text_dir: &Path, id: &str) -> Result<String, CliError> {
    read_text(&text_dir.join(format!("{id}.txt")))
}

/// Load one annotation file. Standoff and BIO need the note text from
/// `text_dir`.
pub fn read_set(
    format: Format,
    id: &str,
    path: &Path,
    text_dir: &Path,
    segmenter: &SegmenterConfig,
) -> Result<AnnotationSet, CliError> {
    let src = read_text(path)?;
    let set = match format {
        Format::Json => from_json(&src).map_err(|e| input_err(path, e))?,
        Format::Brat => {
            let doc = document(id, note_text(text_dir, id)?, segmenter);
            from_standoff(&src, &doc).map_err(|e| input_err(path, e))?
        }
        Format::Bio => {
            let doc = document(id, note_text(text_dir, id)?, segmenter);
            let seqs = read_bio_tsv(&src).map_err(|e| input_err(path, e))?;
            document_from_bio(&doc, &seqs)
        }
    };
    if set.doc_id != id {
        return Err(input_err(path, format!("doc_id `{}` does not match file name `{id}`", set.doc_id)));
    }
    Ok(set)
}

/// Load every annotation in `dir` of the given format, sorted by doc id.
pub fn read_corpus(
    dir: &Path,
    format: Format,
    text_dir: &Path,
    segmenter: &SegmenterConfig,
) -> Result<Vec<AnnotationSet>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", dir.display())));
    }
    list_with_ext(dir, format.ext())?
        .into_iter()
        .map(|(id, path)| read_set(format, &id, &path, text_dir, segmenter))
        .collect()
}

/// Load a directory in whichever format it holds (JSON preferred).
pub fn read_any_corpus(dir: &Path, segmenter: &SegmenterConfig) -> Result<Vec<AnnotationSet>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", dir.display())));
    }
    for format in [Format::Json, Format::Brat, Format::Bio] {
        if !list_with_ext(dir, format.ext())?.is_empty() {
            return read_corpus(dir, format, dir, segmenter);
        }
    }
    Err(CliError::Input(format!("no annotation files found in {}", dir.display())))
}

/// Serialize a set; standoff also writes the note text beside it.
pub fn write_set(
    format: Format,
    out_dir: &Path,
    set: &AnnotationSet,
    text: &str,
    segmenter: &SegmenterConfig,
) -> Result<Vec<BioWarning>, CliError> {
    let id = &set.doc_id;
    let path = out_dir.join(format!("{id}.{}", format.ext()));
    match format {
        Format::Json => write_file(&path, &to_json(set))?,
        Format::Brat => {
            let ann = to_standoff(set).map_err(|e| CliError::Input(format!("{id}: {e}")))?;
            write_file(&path, &ann)?;
            write_file(&out_dir.join(format!("{id}.txt")), text)?;
        }
        Format::Bio => {
            let doc = document(id, text.to_string(), segmenter);
            let (seqs, warnings) = document_to_bio(&doc, set).map_err(|e| CliError::Input(format!("{id}: {e}")))?;
            write_file(&path, &write_bio_tsv(&seqs))?;
            return Ok(warnings);
        }
    }
    Ok(Vec::new())
}
