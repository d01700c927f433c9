//! Monolingual corpora: tokenization, joint vocabulary, filtering, frequency
//! statistics and the rank-correlation divergence measure between dialects.

mod io;
mod spearman;
mod stats;
mod tokenize;
mod vocab;

pub use io::{read_corpus_file, write_corpus_file};
pub use spearman::{freq_table, spearman, FreqTable, SpearmanResult};
pub use stats::{corpus_stats, pair_stats, CorpusStats, PairStats, SideStats};
pub use tokenize::{detokenize, tokenize, TokenizeMode};
pub use vocab::{
    build_joint_vocab, Vocab, BLANK_ID, BOS_ID, EOS_ID, N_SPECIALS, PAD_ID, SPECIAL_TOKENS, UNK_ID,
};

use serde::{Deserialize, Serialize};

use crate::TokenId;

/// Which side of the dialect pair a sentence belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dialect {
    A,
    B,
}

impl Dialect {
    pub fn other(self) -> Self {
        match self {
            Dialect::A => Dialect::B,
            Dialect::B => Dialect::A,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Dialect::A => "A",
            Dialect::B => "B",
        }
    }
}

impl std::fmt::Display for Dialect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Encoded sentence. `ids` never includes BOS/EOS; those are added by the
/// model side when building decoder inputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub ids: Vec<TokenId>,
    pub dialect: Dialect,
}

impl Sentence {
    pub fn new(ids: Vec<TokenId>, dialect: Dialect) -> Self {
        Sentence { ids, dialect }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A filtered, encoded monolingual corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub dialect: Dialect,
}

/// Tokenized but not yet encoded text, one Vec<String> per sentence.
pub type RawCorpus = Vec<Vec<String>>;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid UTF-8 at byte {offset}")]
    Utf8 { path: String, offset: usize },
    #[error("{path}:{line}: carriage return found; corpus files must use LF line endings")]
    CrLf { path: String, line: usize },
    #[error("vocab file line {line}: {msg}")]
    VocabFormat { line: usize, msg: String },
    #[error("vocab file: duplicate token {token:?}")]
    DuplicateToken { token: String },
    #[error("vocab file: expected special token {expected:?} at id {id}, found {found:?}")]
    SpecialMismatch {
        id: TokenId,
        expected: &'static str,
        found: String,
    },
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("need at least {needed} shared tokens for rank correlation, found {found}")]
    InsufficientOverlap { needed: usize, found: usize },
    #[error("rank correlation undefined: {side} frequencies are all tied")]
    ConstantRanks { side: &'static str },
}

/// What `filter_corpus` kept and why it dropped the rest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub dropped_short: usize,
    pub dropped_long: usize,
    pub dropped_oov: usize,
}

/// Keep sentences with `min_len ..= max_len` tokens and no out-of-vocabulary
/// token, encoding the survivors. OOV is checked before length so a sentence
/// failing both counts as OOV only when its length was acceptable.
pub fn filter_corpus(
    raw: &RawCorpus,
    vocab: &Vocab,
    dialect: Dialect,
    min_len: usize,
    max_len: usize,
) -> (Corpus, FilterReport) {
    let mut report = FilterReport::default();
    let mut sentences = Vec::new();
    for tokens in raw {
        if tokens.len() < min_len {
            report.dropped_short += 1;
            continue;
        }
        if tokens.len() > max_len {
            report.dropped_long += 1;
            continue;
        }
        match vocab.encode_strict(tokens) {
            Some(ids) => {
                sentences.push(Sentence::new(ids, dialect));
                report.kept += 1;
            }
            None => report.dropped_oov += 1,
        }
    }
    (Corpus { sentences, dialect }, report)
}
