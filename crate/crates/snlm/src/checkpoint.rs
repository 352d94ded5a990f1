//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "SNLM" u32:version
//! u32:|V| u32:d u32:layers f64:dropout
//! |V| × (u32:len utf8)            vocabulary words in id order
//! |V| × f64                       unigram distribution
//! u32:sections
//! sections × (u32:len utf8:name u32:rank rank×u32:dims f64×Πdims)
//! ```
//!
//! Sections hold the seven parameter tensors under their
//! [`PARAM_NAMES`](snlm_core::model::PARAM_NAMES), the vocabulary counts
//! (`vocab.counts`), the squash flag (`meta.squash`) and, for shifted
//! models, the shift (`meta.shift`).

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use snlm_core::corpus::Vocabulary;
use snlm_core::diagnostics::ShiftedModel;
use snlm_core::model::{LanguageModel, NUM_LAYERS, PARAM_NAMES};
use snlm_core::numerics::ParamTensor;

pub const MAGIC: [u8; 4] = *b"SNLM";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    Io(io::Error),
    BadMagic([u8; 4]),
    UnsupportedVersion(u32),
    /// The file ended inside the named field.
    Truncated(&'static str),
    Invalid(String),
    Model(snlm_core::Error),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "checkpoint i/o: {e}"),
            Self::BadMagic(m) => write!(f, "not a checkpoint (magic {m:?})"),
            Self::UnsupportedVersion(v) => write!(f, "checkpoint version {v} is not supported (expected {VERSION})"),
            Self::Truncated(field) => write!(f, "checkpoint truncated while reading {field}"),
            Self::Invalid(m) => write!(f, "invalid checkpoint: {m}"),
            Self::Model(e) => write!(f, "invalid checkpoint contents: {e}"),
        }
    }
}

impl std::error::Error for CheckpointError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(e) => Some(e),
            Self::Model(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<snlm_core::Error> for CheckpointError {
    fn from(e: snlm_core::Error) -> Self {
        Self::Model(e)
    }
}

/// A trained model with its vocabulary and optional shift.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: LanguageModel,
    pub vocab: Vocabulary,
    pub shift: Option<f64>,
}

impl Checkpoint {
    pub fn new(model: LanguageModel, vocab: Vocabulary) -> Result<Self, CheckpointError> {
        if model.vocab_size() != vocab.len() {
            return Err(CheckpointError::Invalid(format!(
                "model has {} words, vocabulary {}",
                model.vocab_size(),
                vocab.len()
            )));
        }
        Ok(Self { model, vocab, shift: None })
    }

    /// The model with its shift applied (zero when unshifted).
    pub fn scorer(&self) -> ShiftedModel {
        ShiftedModel::new(self.model.clone(), self.shift.unwrap_or(0.0)).expect("stored shift is finite")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&MAGIC);
        w.u32(VERSION);
        w.u32(self.model.vocab_size() as u32);
        w.u32(self.model.dim() as u32);
        w.u32(NUM_LAYERS as u32);
        w.f64(self.model.dropout());
        for word in self.vocab.words() {
            w.str(word);
        }
        for &p in self.vocab.unigram() {
            w.f64(p);
        }

        let counts: Vec<f64> = self.vocab.counts().iter().map(|&c| c as f64).collect();
        let squash = [if self.model.squash() { 1.0 } else { 0.0 }];
        let mut sections: Vec<(&str, Vec<usize>, &[f64])> = PARAM_NAMES
            .iter()
            .zip(self.model.params())
            .map(|(name, p)| (*name, p.shape().to_vec(), p.values()))
            .collect();
        sections.push(("vocab.counts", vec![counts.len()], &counts));
        sections.push(("meta.squash", vec![1], &squash));
        let shift = self.shift.map(|s| [s]);
        if let Some(s) = &shift {
            sections.push(("meta.shift", vec![1], s));
        }
        w.u32(sections.len() as u32);
        for (name, dims, data) in sections {
            w.str(name);
            w.u32(dims.len() as u32);
            for d in dims {
                w.u32(d as u32);
            }
            for &x in data {
                w.f64(x);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf: bytes };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("four bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let vocab_size = r.u32("header")? as usize;
        let dim = r.u32("header")? as usize;
        let layers = r.u32("header")? as usize;
        let dropout = r.f64("header")?;
        if layers != NUM_LAYERS {
            return Err(CheckpointError::Invalid(format!("{layers} layers, this build supports {NUM_LAYERS}")));
        }
        let words = (0..vocab_size).map(|_| r.str("vocabulary")).collect::<Result<Vec<_>, _>>()?;
        let unigram = (0..vocab_size).map(|_| r.f64("unigram")).collect::<Result<Vec<_>, _>>()?;

        let n = r.u32("section count")? as usize;
        let mut params: Vec<Option<ParamTensor>> = vec![None; PARAM_NAMES.len()];
        let (mut counts, mut squash, mut shift) = (None, false, None);
        for _ in 0..n {
            let name = r.str("section name")?;
            let rank = r.u32("section rank")? as usize;
            let dims = (0..rank).map(|_| r.u32("section dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let len = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.filter(|&l| l <= r.buf.len() / 8).ok_or(CheckpointError::Truncated("section data"))?;
            let data = (0..len).map(|_| r.f64("section data")).collect::<Result<Vec<_>, _>>()?;
            match name.as_str() {
                "vocab.counts" => counts = Some(data),
                "meta.squash" => squash = data.first() == Some(&1.0),
                "meta.shift" => shift = data.first().copied(),
                other => {
                    let i = PARAM_NAMES
                        .iter()
                        .position(|p| *p == other)
                        .ok_or_else(|| CheckpointError::Invalid(format!("unknown section {other:?}")))?;
                    params[i] = Some(ParamTensor::new(dims, data)?);
                }
            }
        }
        if !r.buf.is_empty() {
            return Err(CheckpointError::Invalid(format!("{} trailing bytes", r.buf.len())));
        }
        let params = params
            .into_iter()
            .zip(PARAM_NAMES)
            .map(|(p, name)| p.ok_or_else(|| CheckpointError::Invalid(format!("missing section {name}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let counts = counts.ok_or_else(|| CheckpointError::Invalid("missing section vocab.counts".into()))?;
        let counts = counts.into_iter().map(|c| c as u64).collect();

        let mut model = LanguageModel::from_params(vocab_size, dim, dropout, params)?;
        model.set_squash(squash);
        let vocab = Vocabulary::from_parts(words, counts, unigram)?;
        let mut ckpt = Self::new(model, vocab)?;
        if let Some(s) = shift {
            if !s.is_finite() {
                return Err(CheckpointError::Invalid("non-finite shift".into()));
            }
            ckpt.shift = Some(s);
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u32(&mut self, x: u32) {
        self.bytes(&x.to_le_bytes());
    }

    fn f64(&mut self, x: f64) {
        self.bytes(&x.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(field));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("four bytes")))
    }

    fn f64(&mut self, field: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().expect("eight bytes")))
    }

    fn str(&mut self, field: &'static str) -> Result<String, CheckpointError> {
        let n = self.u32(field)? as usize;
        let bytes = self.take(n, field)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CheckpointError::Invalid(format!("{field} is not UTF-8")))
    }
}
