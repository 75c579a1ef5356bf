//! Re-anchoring spans from generated text onto the original sentence.
//!
//! A model asked to reproduce a sentence with markup does not always echo it
//! verbatim. Spans decoded from its output carry offsets into the *generated*
//! plain text, so they are projected back through a character alignment
//! between the source sentence and the generated text.
//!
//! Alignment runs on a normalized projection of both strings: characters are
//! lowercased and whitespace is dropped. Every projected character remembers
//! the original offset it came from, so anchors are reported in original
//! coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::EntityKind;
use crate::spanmark::Decoded;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlignError {
    #[error("input is empty after normalization")]
    EmptyAfterNormalization,
}

/// One step of an alignment path, in original char offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match { source: usize, hypothesis: usize },
    Substitute { source: usize, hypothesis: usize },
    /// Source char with no counterpart in the hypothesis.
    Delete { source: usize },
    /// Hypothesis char with no counterpart in the source.
    Insert { hypothesis: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// Matched `(source_offset, hypothesis_offset)` pairs, strictly
    /// increasing in both coordinates.
    pub pairs: Vec<(usize, usize)>,
    /// Levenshtein distance between the normalized projections.
    pub cost: usize,
    /// The full edit path, source-to-hypothesis order.
    pub ops: Vec<EditOp>,
}

/// Banded DP settings. The band half-width is
/// `max(min_band, |len difference| + slack)` diagonals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandConfig {
    pub min_band: usize,
    pub slack: usize,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self { min_band: 64, slack: 16 }
    }
}

/// Lowercased, whitespace-free projection of `s`: each entry is a normalized
/// char and the original char offset it came from.
pub fn normalize(s: &str) -> Vec<(char, usize)> {
    let mut out = Vec::with_capacity(s.len());
    for (i, c) in s.chars().enumerate() {
        if c.is_whitespace() {
            continue;
        }
        for lc in c.to_lowercase() {
            out.push((lc, i));
        }
    }
    out
}

pub fn align_texts(source: &str, hypothesis: &str) -> Result<Alignment, AlignError> {
    align_texts_with(source, hypothesis, BandConfig::default())
}

pub fn align_texts_with(source: &str, hypothesis: &str, band: BandConfig) -> Result<Alignment, AlignError> {
    let src = normalize(source);
    let hyp = normalize(hypothesis);
    if src.is_empty() || hyp.is_empty() {
        return Err(AlignError::EmptyAfterNormalization);
    }
    let a: Vec<char> = src.iter().map(|p| p.0).collect();
    let b: Vec<char> = hyp.iter().map(|p| p.0).collect();

    let delta = a.len().abs_diff(b.len());
    let width = band.min_band.max(delta + band.slack);
    let path = if width >= a.len().max(b.len()) {
        Dp::new(&a, &b, None).traceback()
    } else {
        let banded = Dp::new(&a, &b, Some(width));
        // Any path that leaves the band costs at least 2(width + 1) - delta.
        if banded.cost() + delta <= 2 * width + 1 {
            banded.traceback()
        } else {
            Dp::new(&a, &b, None).traceback()
        }
    };
    let (cost, steps) = path;

    let mut ops = Vec::with_capacity(steps.len());
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for step in steps {
        let op = match step {
            Step::Diag(i, j) => {
                let (s, h) = (src[i].1, hyp[j].1);
                if a[i] == b[j] {
                    if pairs.last().is_none_or(|&(ps, ph)| s > ps && h > ph) {
                        pairs.push((s, h));
                    }
                    EditOp::Match { source: s, hypothesis: h }
                } else {
                    EditOp::Substitute { source: s, hypothesis: h }
                }
            }
            Step::Del(i) => EditOp::Delete { source: src[i].1 },
            Step::Ins(j) => EditOp::Insert { hypothesis: hyp[j].1 },
        };
        ops.push(op);
    }
    Ok(Alignment { pairs, cost, ops })
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Diag(usize, usize),
    Del(usize),
    Ins(usize),
}

/// Edit-distance table, optionally restricted to diagonals `j - i` in
/// `[-width, width]`.
struct Dp<'a> {
    a: &'a [char],
    b: &'a [char],
    width: Option<usize>,
    cols: usize,
    cells: Vec<u32>,
}

const INF: u32 = u32::MAX / 2;

impl<'a> Dp<'a> {
    fn new(a: &'a [char], b: &'a [char], width: Option<usize>) -> Self {
        let (n, m) = (a.len(), b.len());
        let cols = match width {
            Some(w) => 2 * w + 1,
            None => m + 1,
        };
        let mut dp = Self { a, b, width, cols, cells: vec![INF; (n + 1) * cols] };
        for i in 0..=n {
            let (lo, hi) = dp.col_range(i);
            for j in lo..=hi {
                let v = if i == 0 {
                    j as u32
                } else if j == 0 {
                    i as u32
                } else {
                    let sub = u32::from(a[i - 1] != b[j - 1]);
                    let diag = dp.get(i - 1, j - 1) + sub;
                    let del = dp.get(i - 1, j) + 1;
                    let ins = dp.get(i, j - 1) + 1;
                    diag.min(del).min(ins)
                };
                dp.set(i, j, v);
            }
        }
        dp
    }

    fn col_range(&self, i: usize) -> (usize, usize) {
        let m = self.b.len();
        match self.width {
            Some(w) => (i.saturating_sub(w), (i + w).min(m)),
            None => (0, m),
        }
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        match self.width {
            None => Some(i * self.cols + j),
            Some(w) => {
                let k = j as isize - i as isize + w as isize;
                if k < 0 || k as usize >= self.cols {
                    None
                } else {
                    Some(i * self.cols + k as usize)
                }
            }
        }
    }

    fn get(&self, i: usize, j: usize) -> u32 {
        self.slot(i, j).map_or(INF, |s| self.cells[s])
    }

    fn set(&mut self, i: usize, j: usize, v: u32) {
        let s = self.slot(i, j).expect("set inside band");
        self.cells[s] = v;
    }

    fn cost(&self) -> usize {
        self.get(self.a.len(), self.b.len()) as usize
    }

    /// Walk back from the corner preferring diagonal, then delete, then
    /// insert among equal-cost predecessors.
    fn traceback(&self) -> (usize, Vec<Step>) {
        let (mut i, mut j) = (self.a.len(), self.b.len());
        let mut steps = Vec::with_capacity(i.max(j));
        while i > 0 || j > 0 {
            let here = self.get(i, j);
            if i > 0 && j > 0 {
                let sub = u32::from(self.a[i - 1] != self.b[j - 1]);
                if self.get(i - 1, j - 1) + sub == here {
                    steps.push(Step::Diag(i - 1, j - 1));
                    i -= 1;
                    j -= 1;
                    continue;
                }
            }
            if i > 0 && self.get(i - 1, j) + 1 == here {
                steps.push(Step::Del(i - 1));
                i -= 1;
                continue;
            }
            steps.push(Step::Ins(j - 1));
            j -= 1;
        }
        steps.reverse();
        (self.cost(), steps)
    }
}

/// Span anchoring settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    /// Minimum fraction of a span's characters that must match the source.
    pub confidence_threshold: f64,
    /// Extend spans that split a source word out to the word's boundaries.
    pub snap_to_words: bool,
    #[serde(skip)]
    pub band: BandConfig,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self { confidence_threshold: 0.7, snap_to_words: true, band: BandConfig::default() }
    }
}

/// A span projected onto source offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchoredSpan {
    pub kind: EntityKind,
    pub source_start: usize,
    pub source_end: usize,
    /// Fraction of the span's non-whitespace chars that aligned exactly.
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// No character of the span aligned to the source.
    NoAnchor,
    /// Too few characters aligned.
    LowConfidence,
    /// The anchored source region is broken up by unaligned source text.
    SplitAnchor,
    /// The span contains only whitespace.
    Blank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedSpan {
    pub kind: EntityKind,
    pub start: usize,
    pub end: usize,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorResult {
    pub spans: Vec<AnchoredSpan>,
    pub dropped: Vec<DroppedSpan>,
}

pub fn anchor_spans(source: &str, decoded: &Decoded) -> AnchorResult {
    anchor_spans_with(source, decoded, &AnchorConfig::default())
}

pub fn anchor_spans_with(source: &str, decoded: &Decoded, config: &AnchorConfig) -> AnchorResult {
    let mut result = AnchorResult::default();
    if decoded.spans.is_empty() {
        return result;
    }
    let mut order: Vec<_> = decoded.spans.clone();
    order.sort_by_key(|s| (s.start, s.end));

    let hyp_chars: Vec<char> = decoded.plain_text.chars().collect();
    let src_chars: Vec<char> = source.chars().collect();

    let alignment = match align_texts_with(source, &decoded.plain_text, config.band) {
        Ok(a) => a,
        Err(_) => {
            result.dropped = order
                .iter()
                .map(|s| DroppedSpan { kind: s.kind, start: s.start, end: s.end, reason: DropReason::NoAnchor })
                .collect();
            return result;
        }
    };

    // hypothesis offset -> (source offset, exact match?)
    let mut hyp_to_src: Vec<Option<(usize, bool)>> = vec![None; hyp_chars.len()];
    let mut src_covered = vec![false; src_chars.len()];
    for op in &alignment.ops {
        let (s, h, exact) = match *op {
            EditOp::Match { source, hypothesis } => (source, hypothesis, true),
            EditOp::Substitute { source, hypothesis } => (source, hypothesis, false),
            _ => continue,
        };
        let slot = &mut hyp_to_src[h];
        match slot {
            None => *slot = Some((s, exact)),
            Some((_, e)) => *e &= exact,
        }
    }

    let mut regions: Vec<(usize, usize, usize)> = Vec::new(); // (index into order, start, end)
    let mut confidences = Vec::new();
    for (k, span) in order.iter().enumerate() {
        let drop = |reason| DroppedSpan { kind: span.kind, start: span.start, end: span.end, reason };
        let end = span.end.min(hyp_chars.len());
        let mut total = 0usize;
        let mut exact = 0usize;
        let mut lo = usize::MAX;
        let mut hi = 0usize;
        for h in span.start..end {
            if hyp_chars[h].is_whitespace() {
                continue;
            }
            total += 1;
            if let Some((s, is_exact)) = hyp_to_src[h] {
                if is_exact {
                    exact += 1;
                }
                lo = lo.min(s);
                hi = hi.max(s + 1);
            }
        }
        if total == 0 {
            result.dropped.push(drop(DropReason::Blank));
            continue;
        }
        if exact == 0 {
            result.dropped.push(drop(DropReason::NoAnchor));
            continue;
        }
        let confidence = exact as f64 / total as f64;
        if confidence < config.confidence_threshold {
            result.dropped.push(drop(DropReason::LowConfidence));
            continue;
        }
        // Source coverage of the region must clear the same bar.
        for &(s, _) in hyp_to_src[span.start..end].iter().flatten() {
            src_covered[s] = true;
        }
        let region_chars = (lo..hi).filter(|&s| !src_chars[s].is_whitespace()).count();
        let covered = (lo..hi).filter(|&s| src_covered[s]).count();
        src_covered[lo..hi].fill(false);
        if (covered as f64) < config.confidence_threshold * region_chars as f64 {
            result.dropped.push(drop(DropReason::SplitAnchor));
            continue;
        }
        regions.push((k, lo, hi));
        confidences.push(confidence);
    }

    let is_word = |c: char| c.is_alphanumeric();
    for idx in 0..regions.len() {
        let (k, mut lo, mut hi) = regions[idx];
        if config.snap_to_words {
            let floor = if idx > 0 { regions[idx - 1].2 } else { 0 };
            let ceil = regions.get(idx + 1).map_or(src_chars.len(), |r| r.1);
            let mut new_lo = lo;
            while new_lo > 0 && is_word(src_chars[new_lo - 1]) && is_word(src_chars[new_lo]) {
                new_lo -= 1;
            }
            let mut new_hi = hi;
            while new_hi < src_chars.len() && is_word(src_chars[new_hi - 1]) && is_word(src_chars[new_hi]) {
                new_hi += 1;
            }
            if new_lo >= floor {
                lo = new_lo;
            }
            if new_hi <= ceil {
                hi = new_hi;
            }
            regions[idx].1 = lo;
            regions[idx].2 = hi;
        }
        result.spans.push(AnchoredSpan {
            kind: order[k].kind,
            source_start: lo,
            source_end: hi,
            confidence: confidences[idx],
        });
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ModifierType as Mod;
    use crate::spanmark::{decode_with, Vocabulary};

    #[test]
    fn identical_strings() {
        let a = align_texts("Hgb 10.6", "Hgb 10.6").unwrap();
        assert_eq!(a.cost, 0);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1), (2, 2), (4, 4), (5, 5), (6, 6), (7, 7)]);
    }

    #[test]
    fn case_and_whitespace_are_free() {
        let a = align_texts("Hgb  10.6 gm / dL", "hgb 10.6 gm/dL").unwrap();
        assert_eq!(a.cost, 0);
    }

    #[test]
    fn single_substitution() {
        let a = align_texts("abc", "axc").unwrap();
        assert_eq!(a.cost, 1);
        assert_eq!(a.pairs, vec![(0, 0), (2, 2)]);
    }

    #[test]
    fn empty_inputs_error() {
        assert_eq!(align_texts("  ", "a"), Err(AlignError::EmptyAfterNormalization));
        assert_eq!(align_texts("a", ""), Err(AlignError::EmptyAfterNormalization));
    }

    #[test]
    fn narrow_band_falls_back_to_full_dp() {
        let src = "abcdefghij".repeat(5);
        let hyp = format!("{}{}", "z".repeat(20), &src[..30]);
        let narrow = BandConfig { min_band: 2, slack: 1 };
        let a = align_texts_with(&src, &hyp, narrow).unwrap();
        let b = align_texts_with(&src, &hyp, BandConfig { min_band: 1000, slack: 0 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn verbatim_echo_anchors_everything() {
        let src = "Hgb 10.6 gm / dL";
        let d = decode_with(r#"<span class="test">Hgb</span> <span class="labvalue">10.6 gm / dL</span>"#, Vocabulary::Any);
        let r = anchor_spans(src, &d);
        assert!(r.dropped.is_empty());
        assert_eq!(r.spans.len(), 2);
        assert_eq!((r.spans[0].source_start, r.spans[0].source_end), (0, 3));
        assert_eq!((r.spans[1].source_start, r.spans[1].source_end), (4, 16));
        assert!(r.spans.iter().all(|s| s.confidence == 1.0));
        assert_eq!(r.spans[1].kind, EntityKind::Modifier(Mod::LabValue));
    }

    #[test]
    fn dropped_token_outside_spans() {
        let src = "Patient denies chest pain today";
        let d = decode_with(r#"Patient denies <span class="problem">chest pain</span>"#, Vocabulary::Any);
        let r = anchor_spans(src, &d);
        assert_eq!(r.spans.len(), 1);
        assert_eq!((r.spans[0].source_start, r.spans[0].source_end), (15, 25));
        assert_eq!(r.spans[0].confidence, 1.0);
    }

    #[test]
    fn hallucinated_span_has_no_anchor() {
        let src = "Hgb 10.6 gm / dL";
        let d = decode_with(r#"Hgb 10.6 gm / dL <span class="labvalue">high</span>"#, Vocabulary::Any);
        let r = anchor_spans(src, &d);
        assert!(r.spans.is_empty());
        assert_eq!(r.dropped.len(), 1);
        assert_eq!(r.dropped[0].reason, DropReason::NoAnchor);
    }

    #[test]
    fn split_word_is_snapped_outward() {
        let src = "severe pneumonia noted";
        let d = decode_with(r#"severe <span class="problem">pneumoni</span>a noted"#, Vocabulary::Any);
        let r = anchor_spans(src, &d);
        assert_eq!((r.spans[0].source_start, r.spans[0].source_end), (7, 16));
        let off = AnchorConfig { snap_to_words: false, ..Default::default() };
        let r = anchor_spans_with(src, &d, &off);
        assert_eq!((r.spans[0].source_start, r.spans[0].source_end), (7, 15));
    }

    #[test]
    fn adjacent_spans_in_one_word_do_not_overlap() {
        let src = "take 10mg daily";
        let d = decode_with(
            r#"take <span class="strength">10</span><span class="form">mg</span> daily"#,
            Vocabulary::Any,
        );
        let r = anchor_spans(src, &d);
        assert_eq!(r.spans.len(), 2);
        assert_eq!((r.spans[0].source_start, r.spans[0].source_end), (5, 7));
        assert_eq!((r.spans[1].source_start, r.spans[1].source_end), (7, 9));
    }
}
