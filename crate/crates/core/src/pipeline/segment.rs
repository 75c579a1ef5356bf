//! Rule-based sentence segmentation.
//!
//! Splits on sentence-final punctuation followed by whitespace and an
//! uppercase letter or digit, on blank lines, and on line breaks that start a
//! list item. A period that ends a protected abbreviation never splits.

use serde::{Deserialize, Serialize};

use crate::schema::Sentence;

/// Abbreviations common in clinical notes, compared case-insensitively.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "pt.", "st.", "vs.", "approx.", "e.g.", "i.e.", "etc.", "mg.", "q.d.",
    "b.i.d.", "t.i.d.", "q.i.d.", "q.h.s.", "h.s.", "p.o.", "p.r.n.", "q.o.d.", "a.c.", "p.c.", "fig.", "no.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmenterConfig {
    pub abbreviations: Vec<String>,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self { abbreviations: DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect() }
    }
}

pub fn segment(text: &str) -> Vec<Sentence> {
    segment_with(text, &SegmenterConfig::default())
}

pub fn segment_with(text: &str, config: &SegmenterConfig) -> Vec<Sentence> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let abbrevs: Vec<String> = config.abbreviations.iter().map(|a| a.to_lowercase()).collect();

    let mut cuts = Vec::new();
    for i in 0..n {
        match chars[i] {
            '\n' => {
                let mut j = i + 1;
                while j < n && matches!(chars[j], ' ' | '\t' | '\r') {
                    j += 1;
                }
                if j < n && (chars[j] == '\n' || list_marker_at(&chars, j)) {
                    cuts.push(i);
                }
            }
            '.' | '!' | '?' => {
                let mut k = i + 1;
                while k < n && matches!(chars[k], ')' | ']' | '"' | '\'' | '\u{201d}' | '\u{2019}') {
                    k += 1;
                }
                if k >= n || !chars[k].is_whitespace() {
                    continue;
                }
                let mut m = k;
                while m < n && chars[m].is_whitespace() {
                    m += 1;
                }
                if m >= n || !(chars[m].is_uppercase() || chars[m].is_ascii_digit()) {
                    continue;
                }
                if chars[i] == '.' && is_abbreviation(&chars, i, &abbrevs) {
                    continue;
                }
                cuts.push(k);
            }
            _ => {}
        }
    }
    cuts.push(n);

    let mut out = Vec::new();
    let mut start = 0;
    for cut in cuts {
        let (mut s, mut e) = (start, cut);
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && chars[e - 1].is_whitespace() {
            e -= 1;
        }
        if s < e {
            out.push(Sentence { start: s, end: e });
        }
        start = cut;
    }
    out
}

fn list_marker_at(chars: &[char], j: usize) -> bool {
    let n = chars.len();
    let followed_by_space = |p: usize| p < n && chars[p].is_whitespace();
    match chars[j] {
        '-' | '*' | '\u{2022}' => followed_by_space(j + 1),
        c if c.is_ascii_digit() => {
            let mut p = j;
            while p < n && chars[p].is_ascii_digit() {
                p += 1;
            }
            p < n && matches!(chars[p], '.' | ')') && followed_by_space(p + 1)
        }
        _ => false,
    }
}

/// Whether the token ending with the period at `dot` is protected.
fn is_abbreviation(chars: &[char], dot: usize, abbrevs: &[String]) -> bool {
    let mut s = dot;
    while s > 0 && !chars[s - 1].is_whitespace() && chars[s - 1] != '(' {
        s -= 1;
    }
    let token: String = chars[s..=dot].iter().collect::<String>().to_lowercase();
    abbrevs.contains(&token)
}
