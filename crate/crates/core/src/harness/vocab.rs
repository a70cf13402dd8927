//! Fixed word-level vocabulary covering the synthetic grammar.

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;

const WORDS: [&str; 22] = [
    "[pad]", "[sos]", "[eos]", "the", "small", "large", "red", "green", "blue", "yellow", "magenta", "cyan",
    "circle", "square", "triangle", "shape", "on", "at", "left", "right", "top", "bottom",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
}

impl Vocab {
    pub fn standard() -> Self {
        Vocab { words: WORDS.iter().map(|w| w.to_string()).collect() }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    /// `[SOS] words… [EOS]` padded with `[pad]` to `max_len`.
    pub fn tokenize(&self, expression: &str, max_len: usize) -> Result<Vec<usize>> {
        let mut ids = vec![SOS];
        let mut unknown = Vec::new();
        for w in expression.split_whitespace() {
            let w = w.to_lowercase();
            match self.id(&w) {
                Some(i) if i > EOS => ids.push(i),
                _ => unknown.push(w),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::input(format!("words not in the vocabulary: {}", unknown.join(", "))));
        }
        ids.push(EOS);
        if ids.len() > max_len {
            return Err(Error::input(format!(
                "expression {expression:?} needs {} tokens, more than the limit of {max_len}",
                ids.len()
            )));
        }
        ids.resize(max_len, PAD);
        Ok(ids)
    }

    /// Inverse of [`Vocab::tokenize`] for well-formed sequences.
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let eos = eos_position(ids)?;
        ids[1..eos]
            .iter()
            .map(|&i| {
                self.words
                    .get(i)
                    .filter(|_| i > EOS)
                    .map(String::as_str)
                    .ok_or_else(|| Error::input(format!("token id {i} is not a word")))
            })
            .collect::<Result<Vec<_>>>()
            .map(|w| w.join(" "))
    }
}

/// Index of the single end token, after checking the sequence starts with
/// the start token.
pub fn eos_position(ids: &[usize]) -> Result<usize> {
    if ids.first() != Some(&SOS) {
        return Err(Error::input("token sequence must begin with the start token"));
    }
    let ends: Vec<usize> = ids.iter().enumerate().filter(|(_, &t)| t == EOS).map(|(i, _)| i).collect();
    match ends.as_slice() {
        [e] => Ok(*e),
        _ => Err(Error::input(format!("token sequence must contain exactly one end token, found {}", ends.len()))),
    }
}
