//! Character-offset helpers.
//!
//! All offsets in this crate count Unicode scalar values, not bytes. These
//! helpers translate between the two so that slicing stays O(1) once an index
//! has been built.

/// Byte offsets of every char boundary in a string, plus the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharIndex {
    bounds: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut bounds: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bounds.push(text.len());
        Self { bounds }
    }

    /// Number of chars in the indexed text.
    pub fn char_len(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn byte_offset(&self, char_offset: usize) -> Option<usize> {
        self.bounds.get(char_offset).copied()
    }

    /// Char offset of a byte offset that sits on a char boundary.
    pub fn char_offset(&self, byte_offset: usize) -> Option<usize> {
        self.bounds.binary_search(&byte_offset).ok()
    }

    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> Option<&'a str> {
        if start > end {
            return None;
        }
        let b0 = self.byte_offset(start)?;
        let b1 = self.byte_offset(end)?;
        text.get(b0..b1)
    }
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Slice `text` by char offsets without a prebuilt index.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut iter = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b0 = iter.nth(start)?;
    let b1 = if end == start {
        b0
    } else {
        iter.nth(end - start - 1)?
    };
    text.get(b0..b1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_by_scalar_values() {
        let s = "fièvre 38°C";
        assert_eq!(char_slice(s, 0, 6), Some("fièvre"));
        assert_eq!(char_slice(s, 7, 11), Some("38°C"));
        assert_eq!(char_slice(s, 11, 11), Some(""));
        assert_eq!(char_slice(s, 3, 12), None);
        let idx = CharIndex::new(s);
        assert_eq!(idx.char_len(), 11);
        assert_eq!(idx.slice(s, 2, 3), Some("è"));
        assert_eq!(idx.char_offset(4), Some(3));
        assert_eq!(idx.char_offset(3), None);
    }
}
