//! Text preprocessing: sentence splitting, lowercasing tokenization, and
//! deterministic vocabulary construction from training-split notes.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextPrepError {
    #[error("vocabulary is empty after applying min_count={min_count}")]
    EmptyVocabulary { min_count: u64 },
    #[error("min_count must be >= 1")]
    InvalidMinCount,
}

/// One note reduced to lowercase token sequences, one sequence per sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedNote {
    pub admission_id: String,
    pub category: String,
    pub sentences: Vec<Vec<String>>,
}

impl TokenizedNote {
    pub fn from_text(admission_id: &str, category: &str, text: &str) -> Self {
        let sentences = split_sentences(text)
            .iter()
            .map(|s| tokenize(s))
            .filter(|toks| !toks.is_empty())
            .collect();
        TokenizedNote {
            admission_id: admission_id.to_string(),
            category: category.to_string(),
            sentences,
        }
    }

    /// All tokens flattened across sentences, multiplicity preserved.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences.iter().flatten().map(String::as_str)
    }
}

/// Split text at newlines and after standard ending punctuation (`.`, `!`, `?`).
/// Empty and whitespace-only segments are dropped; segments are trimmed.
pub fn split_sentences(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in raw.chars() {
        match ch {
            '\n' => {
                push_segment(&mut out, &mut current);
            }
            '.' | '!' | '?' => {
                current.push(ch);
                push_segment(&mut out, &mut current);
            }
            _ => current.push(ch),
        }
    }
    push_segment(&mut out, &mut current);
    out
}

fn push_segment(out: &mut Vec<String>, current: &mut String) {
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        out.push(trimmed.to_string());
    }
    current.clear();
}

/// Lowercase the sentence and emit maximal runs of alphanumeric characters.
pub fn tokenize(sentence: &str) -> Vec<String> {
    let lowered = sentence.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in lowered.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Dense token↔index map with corpus frequencies.
///
/// Index order is descending frequency with lexicographic tie-break, so the
/// vocabulary is a pure function of the frequency multiset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    index_of: HashMap<String, usize>,
    tokens: Vec<String>,
    frequencies: Vec<u64>,
    min_count: u64,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    t: String,
    f: u64,
}

#[derive(Serialize, Deserialize)]
struct VocabJson {
    min_count: u64,
    tokens: Vec<VocabEntry>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.index_of.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn frequency(&self, index: usize) -> u64 {
        self.frequencies[index]
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Total frequency mass of all kept tokens.
    pub fn total_frequency(&self) -> u64 {
        self.frequencies.iter().sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<VocabEntry> = self
            .tokens
            .iter()
            .zip(&self.frequencies)
            .map(|(t, f)| VocabEntry {
                t: t.clone(),
                f: *f,
            })
            .collect();
        serde_json::to_value(VocabJson {
            min_count: self.min_count,
            tokens: entries,
        })
        .expect("vocabulary serialization cannot fail")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, serde_json::Error> {
        let raw: VocabJson = serde_json::from_value(value.clone())?;
        let tokens: Vec<String> = raw.tokens.iter().map(|e| e.t.clone()).collect();
        let frequencies: Vec<u64> = raw.tokens.iter().map(|e| e.f).collect();
        let index_of = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            index_of,
            tokens,
            frequencies,
            min_count: raw.min_count,
        })
    }
}

/// Count token frequencies over the notes and keep tokens with total
/// frequency >= `min_count`.
pub fn build_vocabulary<'a, I>(notes: I, min_count: u64) -> Result<Vocabulary, TextPrepError>
where
    I: IntoIterator<Item = &'a TokenizedNote>,
{
    if min_count == 0 {
        return Err(TextPrepError::InvalidMinCount);
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for note in notes {
        for tok in note.tokens() {
            *counts.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, f)| *f >= min_count)
        .collect();
    if kept.is_empty() {
        return Err(TextPrepError::EmptyVocabulary { min_count });
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let tokens: Vec<String> = kept.iter().map(|(t, _)| t.clone()).collect();
    let frequencies: Vec<u64> = kept.iter().map(|(_, f)| *f).collect();
    let index_of = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Ok(Vocabulary {
        index_of,
        tokens,
        frequencies,
        min_count,
    })
}
