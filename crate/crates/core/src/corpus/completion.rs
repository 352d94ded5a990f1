use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Vocabulary, GAP};
use crate::{Error, Result};

pub const NUM_CANDIDATES: usize = 5;

/// A sentence with one blank and five candidate fillers.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionItem {
    pub tokens: Vec<String>,
    pub gap: usize,
    pub candidates: [String; NUM_CANDIDATES],
    pub answer: Option<usize>,
    /// Sentence ids with the gap slot holding `Vocabulary::GAP_ID`.
    pub token_ids: Vec<usize>,
    /// Candidate ids; out-of-vocabulary candidates map to `<unk>`.
    pub candidate_ids: [usize; NUM_CANDIDATES],
}

impl CompletionItem {
    /// Sentence ids with candidate `c` written into the gap.
    pub fn filled(&self, c: usize) -> Vec<usize> {
        let mut ids = self.token_ids.clone();
        ids[self.gap] = self.candidate_ids[c];
        ids
    }
}

/// Parses the completion format, one item per non-blank line:
///
/// ```text
/// the ___ sat on the mat | cat dog run blue of | 0
/// ```
///
/// The answer field is optional. With `lowercase`, sentence words and
/// candidates are case-folded before lookup.
pub fn parse_completions(text: &str, vocab: &Vocabulary, lowercase: bool) -> Result<Vec<CompletionItem>> {
    let mut items = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        items.push(parse_line(raw, vocab, lowercase).map_err(|message| Error::Parse { line: n + 1, message })?);
    }
    Ok(items)
}

fn fold(s: &str, lowercase: bool) -> String {
    if lowercase {
        s.to_lowercase()
    } else {
        s.to_string()
    }
}

fn parse_line(line: &str, vocab: &Vocabulary, lowercase: bool) -> core::result::Result<CompletionItem, String> {
    let fields: Vec<&str> = line.split('|').collect();
    if !(2..=3).contains(&fields.len()) {
        return Err("expected `sentence | five candidates [| answer]`".into());
    }
    let tokens: Vec<String> = fields[0].split_whitespace().map(|t| fold(t, lowercase)).collect();
    let gaps: Vec<usize> = tokens.iter().enumerate().filter(|(_, t)| *t == GAP).map(|(i, _)| i).collect();
    let gap = match gaps.as_slice() {
        [g] => *g,
        [] => return Err(alloc::format!("sentence has no `{GAP}` gap")),
        _ => return Err(alloc::format!("sentence has {} gaps, expected one", gaps.len())),
    };

    let cands: Vec<String> = fields[1].split_whitespace().map(|t| fold(t, lowercase)).collect();
    if cands.len() != NUM_CANDIDATES {
        return Err(alloc::format!("expected {NUM_CANDIDATES} candidates, found {}", cands.len()));
    }
    for i in 0..cands.len() {
        if cands[..i].contains(&cands[i]) {
            return Err(alloc::format!("duplicate candidate {:?}", cands[i]));
        }
    }

    let answer = match fields.get(2).map(|s| s.trim()) {
        None | Some("") => None,
        Some(s) => {
            let a: usize = s.parse().map_err(|_| alloc::format!("answer index {s:?} is not a number"))?;
            if a >= NUM_CANDIDATES {
                return Err(alloc::format!("answer index {a} out of range"));
            }
            Some(a)
        }
    };

    let token_ids = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| if i == gap { Vocabulary::GAP_ID } else { vocab.id_or_unk(t) })
        .collect();
    let candidate_ids = core::array::from_fn(|i| vocab.id_or_unk(&cands[i]));
    let candidates: [String; NUM_CANDIDATES] = cands.try_into().expect("length checked above");
    Ok(CompletionItem { tokens, gap, candidates, answer, token_ids, candidate_ids })
}
