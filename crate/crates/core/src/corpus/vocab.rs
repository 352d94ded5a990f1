use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";
/// Marks the blank in a completion item; reserved so it never collides with
/// a corpus word.
pub const GAP: &str = "___";

const RESERVED: [&str; 3] = [UNK, EOS, GAP];

/// Word ↔ id map with corpus counts and the unigram distribution over the
/// mapped corpus (rare words folded into `<unk>`, one `<eos>` per line).
///
/// Reserved tokens keep their realized frequency, which may be zero (the gap
/// marker always is). Every non-reserved word has a positive unigram.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: BTreeMap<String, usize>,
    counts: Vec<u64>,
    unigram: Vec<f64>,
}

impl Vocabulary {
    pub const UNK_ID: usize = 0;
    pub const EOS_ID: usize = 1;
    pub const GAP_ID: usize = 2;

    /// Builds a vocabulary from whitespace-tokenized lines.
    ///
    /// Words seen fewer than `min_count` times map to `<unk>`. Ids are dense:
    /// the three reserved tokens first, then words by descending count with
    /// ties broken lexicographically.
    pub fn build<'a, I>(lines: I, min_count: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut raw: BTreeMap<&'a str, u64> = BTreeMap::new();
        let mut lines_seen = 0u64;
        let mut tokens_seen = 0u64;
        for line in lines {
            lines_seen += 1;
            for tok in line.split_whitespace() {
                *raw.entry(tok).or_default() += 1;
                tokens_seen += 1;
            }
        }
        if tokens_seen == 0 {
            return Err(Error::Empty("corpus has no tokens"));
        }

        let mut reserved_counts = [0u64; 3];
        reserved_counts[Self::EOS_ID] = lines_seen;
        let mut kept: Vec<(&str, u64)> = Vec::new();
        for (&w, &c) in &raw {
            if let Some(r) = RESERVED.iter().position(|&x| x == w) {
                reserved_counts[r] += c;
            } else if c >= min_count {
                kept.push((w, c));
            } else {
                reserved_counts[Self::UNK_ID] += c;
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

        let mut words: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut counts: Vec<u64> = reserved_counts.to_vec();
        for (w, c) in kept {
            words.push(w.to_string());
            counts.push(c);
        }
        Self::from_counts(words, counts)
    }

    /// Rebuilds a vocabulary from words in id order and their counts. The
    /// first three words must be the reserved tokens.
    pub fn from_counts(words: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if words.len() != counts.len() {
            return Err(Error::Shape("one count per word required".into()));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::Empty("vocabulary counts are all zero"));
        }
        let unigram = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Self::from_parts(words, counts, unigram)
    }

    /// Rebuilds a vocabulary with an explicit unigram (used by checkpoints so
    /// the stored probabilities round-trip bit-exactly).
    pub fn from_parts(words: Vec<String>, counts: Vec<u64>, unigram: Vec<f64>) -> Result<Self> {
        if words.len() < RESERVED.len() || words.iter().zip(RESERVED).any(|(w, r)| w != r) {
            return Err(Error::Argument("vocabulary must start with <unk>, <eos>, ___".into()));
        }
        if words.len() != counts.len() || words.len() != unigram.len() {
            return Err(Error::Shape("words, counts and unigram differ in length".into()));
        }
        let mut ids = BTreeMap::new();
        for (i, w) in words.iter().enumerate() {
            if ids.insert(w.clone(), i).is_some() {
                return Err(Error::Argument(alloc::format!("duplicate word {w:?}")));
            }
        }
        for (i, &p) in unigram.iter().enumerate() {
            if !(p >= 0.0 && p.is_finite()) || (i >= RESERVED.len() && p <= 0.0) {
                return Err(Error::Domain(alloc::format!("unigram of {:?} is {p}", words[i])));
            }
        }
        Ok(Self { words, ids, counts, unigram })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id_of(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    /// Id of `word`, or `<unk>` when it is out of vocabulary.
    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id_of(word).unwrap_or(Self::UNK_ID)
    }

    pub fn word_of(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn unigram(&self) -> &[f64] {
        &self.unigram
    }

    /// Maps lines to one id stream, appending `<eos>` after every line.
    pub fn encode_lines<'a, I>(&self, lines: I) -> Vec<usize>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut out = Vec::new();
        for line in lines {
            out.extend(line.split_whitespace().map(|w| self.id_or_unk(w)));
            out.push(Self::EOS_ID);
        }
        out
    }
}
