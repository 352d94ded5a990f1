//! Plain-text corpus and completion-task readers.

use std::fs;
use std::io;
use std::path::Path;

use snlm_core::corpus::{batchify, parse_completions, BatchStream, CompletionItem, Vocabulary};

/// Non-blank lines of a UTF-8 file. Blank lines would otherwise become
/// bare end-of-sentence markers.
pub fn read_lines(path: &Path) -> io::Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

/// The file as one id stream with `<eos>` closing every line.
pub fn encode_file(path: &Path, vocab: &Vocabulary) -> io::Result<Vec<usize>> {
    let lines = read_lines(path)?;
    Ok(vocab.encode_lines(lines.iter().map(String::as_str)))
}

/// Each line as its own id sequence, without an end marker.
pub fn encode_sentences(path: &Path, vocab: &Vocabulary) -> io::Result<Vec<Vec<usize>>> {
    let lines = read_lines(path)?;
    Ok(lines.iter().map(|l| l.split_whitespace().map(|w| vocab.id_or_unk(w)).collect()).collect())
}

pub fn stream_file(path: &Path, vocab: &Vocabulary, batch: usize, steps: usize) -> anyhow::Result<BatchStream> {
    let ids = encode_file(path, vocab)?;
    Ok(batchify(&ids, batch, steps)?)
}

pub fn read_completions(path: &Path, vocab: &Vocabulary, lowercase: bool) -> anyhow::Result<Vec<CompletionItem>> {
    let text = fs::read_to_string(path)?;
    Ok(parse_completions(&text, vocab, lowercase)?)
}
