// SPDX-License-Identifier: MIT OR Apache-2.0

//! Word-level tokenizer over the shipped 256-entry table.

use std::collections::HashMap;
use std::sync::OnceLock;

const TABLE: &str = include_str!("vocab.txt");

pub const UNK: u32 = 2;

struct Vocab {
    words: Vec<&'static str>,
    ids: HashMap<&'static str, u32>,
}

fn vocab() -> &'static Vocab {
    static VOCAB: OnceLock<Vocab> = OnceLock::new();
    VOCAB.get_or_init(|| {
        let words: Vec<&'static str> = TABLE.lines().collect();
        let ids = words.iter().enumerate().map(|(i, w)| (*w, i as u32)).collect();
        Vocab { words, ids }
    })
}

pub fn vocab_size() -> usize {
    vocab().words.len()
}

pub fn token_id(word: &str) -> Option<u32> {
    vocab().ids.get(word).copied()
}

/// Lowercases, splits on whitespace and peels `? . ,` into their own tokens.
/// Words missing from the table map to `<unk>`.
pub fn tokenize(text: &str) -> Vec<u32> {
    let mut out = Vec::new();
    let lower = text.to_lowercase();
    for raw in lower.split_whitespace() {
        let mut word = String::new();
        for ch in raw.chars() {
            if matches!(ch, '?' | '.' | ',') {
                if !word.is_empty() {
                    out.push(token_id(&word).unwrap_or(UNK));
                    word.clear();
                }
                out.push(token_id(&ch.to_string()).unwrap_or(UNK));
            } else {
                word.push(ch);
            }
        }
        if !word.is_empty() {
            out.push(token_id(&word).unwrap_or(UNK));
        }
    }
    out
}

pub fn detokenize(tokens: &[u32]) -> String {
    let v = vocab();
    tokens
        .iter()
        .map(|&t| v.words.get(t as usize).copied().unwrap_or("<unk>"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_has_256_unique_entries() {
        assert_eq!(vocab_size(), 256);
        let mut w = vocab().words.clone();
        w.sort();
        w.dedup();
        assert_eq!(w.len(), 256);
    }

    #[test]
    fn punctuation_is_split() {
        let t = tokenize("Is there a square?");
        assert_eq!(detokenize(&t), "is there a square ?");
        assert!(!t.contains(&UNK));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        assert_eq!(tokenize("zebra"), vec![UNK]);
    }
}
