//! Whitespace tokenizer with a byte fallback, used by the toy model.
//!
//! Ids `0..5` are special tokens, `5..261` are raw bytes, and the lexicon
//! words follow. A word outside the lexicon becomes one token per byte.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use super::ModelProfile;

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const USER_ID: TokenId = 3;
pub const ASSISTANT_ID: TokenId = 4;
const BYTE_BASE: TokenId = 5;
pub const RESERVED_IDS: usize = 5 + 256;

const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "</s>", "<|user|>", "<|assistant|>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    /// Byte range of this token in the encoded text.
    pub span: Range<usize>,
    /// Byte range of the whitespace-delimited word the token belongs to.
    pub word: Range<usize>,
    pub surface: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyTokenizer {
    lexicon: Vec<String>,
    index: HashMap<String, TokenId>,
}

fn words_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s, &text[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out.into_iter()
}

impl ToyTokenizer {
    pub fn profile() -> ModelProfile {
        ModelProfile {
            model_id: "toy".into(),
            user_token: SPECIALS[USER_ID as usize].into(),
            assistant_token: SPECIALS[ASSISTANT_ID as usize].into(),
            stop_token: SPECIALS[EOS_ID as usize].into(),
        }
    }

    /// Lexicon in the given order; duplicates and special strings are skipped.
    pub fn with_lexicon<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut lexicon = Vec::new();
        let mut index = HashMap::new();
        for w in words {
            let w = w.as_ref();
            if w.is_empty() || w.chars().any(char::is_whitespace) || SPECIALS.contains(&w) || index.contains_key(w) {
                continue;
            }
            index.insert(w.to_string(), (RESERVED_IDS + lexicon.len()) as TokenId);
            lexicon.push(w.to_string());
        }
        Self { lexicon, index }
    }

    /// The `capacity` most frequent words of `texts` (ties broken alphabetically).
    pub fn from_texts<S: AsRef<str>>(texts: impl IntoIterator<Item = S>, capacity: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for (_, w) in words_with_offsets(t.as_ref()) {
                if !SPECIALS.contains(&w) {
                    *counts.entry(w.to_string()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::with_lexicon(ranked.into_iter().take(capacity).map(|(w, _)| w))
    }

    pub fn vocab_size(&self) -> usize {
        RESERVED_IDS + self.lexicon.len()
    }

    pub fn lexicon(&self) -> &[String] {
        &self.lexicon
    }

    pub fn word_id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        let mut tokens = Vec::new();
        for (start, w) in words_with_offsets(text) {
            let word = start..start + w.len();
            if let Some(pos) = SPECIALS.iter().position(|s| *s == w) {
                tokens.push(Token { id: pos as TokenId, span: word.clone(), word, surface: w.into() });
            } else if let Some(&id) = self.index.get(w) {
                tokens.push(Token { id, span: word.clone(), word, surface: w.into() });
            } else {
                for (j, b) in w.bytes().enumerate() {
                    tokens.push(Token {
                        id: BYTE_BASE + b as TokenId,
                        span: start + j..start + j + 1,
                        word: word.clone(),
                        surface: String::from_utf8_lossy(&[b]).into_owned(),
                    });
                }
            }
        }
        tokens
    }

    pub fn is_special(id: TokenId) -> bool {
        (id as usize) < SPECIALS.len()
    }

    pub fn count(&self, text: &str) -> usize {
        words_with_offsets(text)
            .map(|(_, w)| if SPECIALS.contains(&w) || self.index.contains_key(w) { 1 } else { w.len() })
            .sum()
    }

    pub fn surface(&self, id: TokenId) -> String {
        let id = id as usize;
        if id < SPECIALS.len() {
            SPECIALS[id].to_string()
        } else if id < RESERVED_IDS {
            String::from_utf8_lossy(&[(id - BYTE_BASE as usize) as u8]).into_owned()
        } else {
            self.lexicon.get(id - RESERVED_IDS).cloned().unwrap_or_else(|| SPECIALS[UNK_ID as usize].into())
        }
    }

    /// Generated tokens are joined with single spaces.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&id| self.surface(id)).collect::<Vec<_>>().join(" ")
    }

    /// Tokens the toy decoder may emit: end-of-sequence, lexicon words and
    /// printable ASCII bytes. Each decodes to text that re-tokenizes to a
    /// single token.
    pub fn is_generatable(&self, id: TokenId) -> bool {
        let id_us = id as usize;
        if id == EOS_ID {
            return true;
        }
        if (BYTE_BASE as usize..RESERVED_IDS).contains(&id_us) {
            let b = (id - BYTE_BASE) as u8;
            return b.is_ascii_graphic() && !self.index.contains_key(&(b as char).to_string());
        }
        id_us >= RESERVED_IDS && id_us < self.vocab_size()
    }
}
