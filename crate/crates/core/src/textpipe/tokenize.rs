use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ApceError, Result};

pub const DEFAULT_VOCAB_SIZE: u32 = 32768;

/// Ordered token ids with optional character offsets into the source text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    /// `(start, end)` char offsets per token, when produced from text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_span: Option<Vec<(usize, usize)>>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self {
            tokens,
            source_span: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.tokens
    }
}

/// Splits lowercase text into alphanumeric runs and single punctuation
/// characters. Returns `(surface, char_start, char_end)` triples.
pub fn split_words(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    for (pos, ch) in text.chars().enumerate() {
        if ch.is_alphanumeric() {
            if cur.is_empty() {
                start = pos;
            }
            cur.extend(ch.to_lowercase());
            continue;
        }
        if !cur.is_empty() {
            out.push((std::mem::take(&mut cur), start, pos));
        }
        if !ch.is_whitespace() {
            out.push((ch.to_lowercase().collect(), pos, pos + 1));
        }
    }
    if !cur.is_empty() {
        let end = text.chars().count();
        out.push((cur, start, end));
    }
    out
}

fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in bytes {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Whitespace/punctuation tokenizer mapping words to ids via FNV-1a modulo
/// the vocabulary size. Stateless; use [`Vocabulary`] to keep surfaces for
/// detokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    vocab_size: u32,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            vocab_size: DEFAULT_VOCAB_SIZE,
        }
    }
}

impl Tokenizer {
    pub fn new(vocab_size: u32) -> Result<Self> {
        if vocab_size == 0 {
            return Err(ApceError::invalid("vocab_size must be positive"));
        }
        Ok(Self { vocab_size })
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn token_id(&self, surface: &str) -> u32 {
        fnv1a32(surface.as_bytes()) % self.vocab_size
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let words = split_words(text);
        let mut tokens = Vec::with_capacity(words.len());
        let mut spans = Vec::with_capacity(words.len());
        for (w, s, e) in &words {
            tokens.push(self.token_id(w));
            spans.push((*s, *e));
        }
        TokenSequence {
            tokens,
            source_span: Some(spans),
        }
    }

    /// Like [`Tokenizer::tokenize`], also recording each id's first surface.
    pub fn tokenize_recording(&self, text: &str, vocab: &mut Vocabulary) -> TokenSequence {
        for (w, _, _) in split_words(text) {
            vocab.surfaces.entry(self.token_id(&w)).or_insert(w);
        }
        self.tokenize(text)
    }
}

/// Id → surface table accumulated while tokenizing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: BTreeMap<u32, String>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.surfaces.get(&id).map(String::as_str)
    }

    /// Joins surfaces with single spaces. Re-tokenizing the result yields the
    /// same ids. Unknown ids are an error.
    pub fn detokenize(&self, tokens: &[u32]) -> Result<String> {
        let words = tokens
            .iter()
            .map(|id| {
                self.surface(*id)
                    .ok_or_else(|| ApceError::invalid(format!("unknown token id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }

    /// Lossy rendering for reports: unknown ids print as `<id>`.
    pub fn render(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|id| match self.surface(*id) {
                Some(s) => s.to_string(),
                None => format!("<{id}>"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}
