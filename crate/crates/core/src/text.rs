//! Tokenization and sentence segmentation.
//!
//! Both are deliberately simple and deterministic: tokens are maximal runs of
//! alphanumeric characters, lowercased; sentences end at `.`, `!` or `?` when
//! followed by whitespace or the end of the text. There is no abbreviation
//! list, so `"Dr. Smith"` splits after `"Dr."`.

use serde::{Deserialize, Serialize};

/// A sentence of a document: its tokens and the byte span it covers in the
/// document's raw text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    /// Half-open byte range `[start, end)` into the owning document's text.
    pub char_span: (usize, usize),
}

impl Sentence {
    pub fn text<'a>(&self, raw_text: &'a str) -> &'a str {
        &raw_text[self.char_span.0..self.char_span.1]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits `text` into sentences.
///
/// Fragments that carry no token (e.g. a stray `"..."`) are merged into the
/// previous sentence, or into the next one when they lead the text. A text
/// without any token yields no sentences.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let mut fragments: Vec<(usize, usize)> = Vec::new();
    let mut start: Option<usize> = None;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if start.is_none() {
            if c.is_whitespace() {
                continue;
            }
            start = Some(i);
        }
        if is_terminator(c) {
            let at_boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                fragments.push((start.take().unwrap_or(i), i + c.len_utf8()));
            }
        }
    }
    if let Some(s) = start {
        let end = s + text[s..].trim_end().len();
        if end > s {
            fragments.push((s, end));
        }
    }

    let mut sentences: Vec<Sentence> = Vec::with_capacity(fragments.len());
    let mut pending_start: Option<usize> = None;
    for (s, e) in fragments {
        let tokens = tokenize(&text[s..e]);
        if tokens.is_empty() {
            match sentences.last_mut() {
                Some(prev) => prev.char_span.1 = e,
                None => {
                    pending_start.get_or_insert(s);
                }
            }
            continue;
        }
        let begin = pending_start.take().unwrap_or(s);
        if begin < s {
            // a leading tokenless fragment contributes no tokens
            sentences.push(Sentence {
                tokens: tokenize(&text[begin..e]),
                char_span: (begin, e),
            });
        } else {
            sentences.push(Sentence {
                tokens,
                char_span: (s, e),
            });
        }
    }
    sentences
}
