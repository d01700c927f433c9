//! Joint vocabulary over both dialects with fixed special tokens. Ordering is
//! fully specified (specials, then frequency descending, ties by codepoint
//! ascending) so two builds over the same corpora are identical.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{CorpusError, RawCorpus};
use crate::TokenId;

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const UNK_ID: TokenId = 3;
pub const BLANK_ID: TokenId = 4;
pub const N_SPECIALS: usize = 5;

pub const SPECIAL_TOKENS: [&str; N_SPECIALS] = ["<pad>", "<bos>", "<eos>", "<unk>", "<blank>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    id_of: HashMap<String, TokenId>,
}

impl Vocab {
    fn from_entries(entries: Vec<(String, u64)>) -> Self {
        let mut tokens = Vec::with_capacity(entries.len());
        let mut freqs = Vec::with_capacity(entries.len());
        let mut id_of = HashMap::with_capacity(entries.len());
        for (tok, freq) in entries {
            id_of.insert(tok.clone(), tokens.len() as TokenId);
            tokens.push(tok);
            freqs.push(freq);
        }
        Vocab {
            tokens,
            freqs,
            id_of,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.id_of.get(token).copied()
    }

    /// Token id, falling back to `<unk>`.
    pub fn encode(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> Result<&str, CorpusError> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(CorpusError::IdOutOfRange {
                id,
                size: self.tokens.len(),
            })
    }

    /// Stored corpus frequency (0 for specials and vocab-file tokens without
    /// counts).
    pub fn freq(&self, id: TokenId) -> u64 {
        self.freqs.get(id as usize).copied().unwrap_or(0)
    }

    pub fn encode_sentence(&self, tokens: &[String]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.encode(t)).collect()
    }

    /// None if any token is out of vocabulary.
    pub fn encode_strict(&self, tokens: &[String]) -> Option<Vec<TokenId>> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode_sentence(&self, ids: &[TokenId]) -> Result<Vec<String>, CorpusError> {
        ids.iter()
            .map(|&id| self.token(id).map(String::from))
            .collect()
    }

    /// Write as TSV, one `token\tfreq` line per id, LF endings. Loading the
    /// result reproduces the vocabulary bit for bit.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for (tok, freq) in self.tokens.iter().zip(&self.freqs) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&freq.to_string());
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        f.write_all(out.as_bytes()).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = super::io::read_to_string(path)?;
        let mut entries = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in text.split('\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, freq_str) = line.split_once('\t').ok_or_else(|| CorpusError::VocabFormat {
                line: i + 1,
                msg: "expected token<TAB>frequency".into(),
            })?;
            let freq: u64 = freq_str.parse().map_err(|_| CorpusError::VocabFormat {
                line: i + 1,
                msg: format!("bad frequency {freq_str:?}"),
            })?;
            if tok.is_empty() {
                return Err(CorpusError::VocabFormat {
                    line: i + 1,
                    msg: "empty token".into(),
                });
            }
            if seen.insert(tok.to_string(), ()).is_some() {
                return Err(CorpusError::DuplicateToken {
                    token: tok.to_string(),
                });
            }
            entries.push((tok.to_string(), freq));
        }
        for (id, expected) in SPECIAL_TOKENS.iter().enumerate() {
            match entries.get(id) {
                Some((tok, _)) if tok == expected => {}
                other => {
                    return Err(CorpusError::SpecialMismatch {
                        id: id as TokenId,
                        expected,
                        found: other.map(|(t, _)| t.clone()).unwrap_or_default(),
                    })
                }
            }
        }
        Ok(Vocab::from_entries(entries))
    }
}

/// Build one vocabulary over any number of corpora. Tokens below `min_freq`
/// (summed across corpora) are dropped; literal special-token strings in the
/// text are ignored since those ids are reserved.
pub fn build_joint_vocab(corpora: &[&RawCorpus], min_freq: u64) -> Vocab {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for corpus in corpora {
        for sentence in corpus.iter() {
            for tok in sentence {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|(tok, freq)| *freq >= min_freq && !SPECIAL_TOKENS.contains(tok))
        .collect();
    ranked.sort_by(|(ta, fa), (tb, fb)| fb.cmp(fa).then_with(|| ta.cmp(tb)));

    let mut entries: Vec<(String, u64)> = SPECIAL_TOKENS
        .iter()
        .map(|s| ((*s).to_string(), 0))
        .collect();
    entries.extend(ranked.into_iter().map(|(t, f)| (t.to_string(), f)));
    Vocab::from_entries(entries)
}

#[cfg(test)]
mod tests {
    use super::super::tokenize::{tokenize, TokenizeMode};
    use super::*;

    fn raw(lines: &[&str]) -> RawCorpus {
        lines
            .iter()
            .map(|l| tokenize(l, TokenizeMode::Char))
            .collect()
    }

    #[test]
    fn specials_occupy_fixed_ids() {
        let v = build_joint_vocab(&[&raw(&["ab"])], 1);
        assert_eq!(v.id("<pad>"), Some(PAD_ID));
        assert_eq!(v.id("<bos>"), Some(BOS_ID));
        assert_eq!(v.id("<eos>"), Some(EOS_ID));
        assert_eq!(v.id("<unk>"), Some(UNK_ID));
        assert_eq!(v.id("<blank>"), Some(BLANK_ID));
        assert_eq!(v.len(), 7);
    }

    #[test]
    fn ordering_by_freq_then_codepoint() {
        // c appears 3 times; a and b twice each -> a before b by codepoint.
        let v = build_joint_vocab(&[&raw(&["cab", "cab", "c"])], 1);
        assert_eq!(v.token(5).unwrap(), "c");
        assert_eq!(v.token(6).unwrap(), "a");
        assert_eq!(v.token(7).unwrap(), "b");
    }

    #[test]
    fn min_freq_prunes_rare_tokens() {
        let v = build_joint_vocab(&[&raw(&["aab"])], 2);
        assert_eq!(v.id("a"), Some(5));
        assert_eq!(v.id("b"), None);
        assert_eq!(v.encode("b"), UNK_ID);
    }

    #[test]
    fn joint_counts_sum_across_corpora() {
        let a = raw(&["xy"]);
        let b = raw(&["x"]);
        let v = build_joint_vocab(&[&a, &b], 2);
        assert_eq!(v.id("x"), Some(5));
        assert_eq!(v.id("y"), None);
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("vocab-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.tsv");
        let v = build_joint_vocab(&[&raw(&["你好好世界", "你好"])], 1);
        v.save(&path).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded, v);
        loaded.save(&path).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn load_rejects_missing_specials() {
        let dir = std::env::temp_dir().join(format!("vocab-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.tsv");
        std::fs::write(&path, "a\t3\nb\t2\n").unwrap();
        let err = Vocab::load(&path).unwrap_err();
        assert!(matches!(err, CorpusError::SpecialMismatch { id: 0, .. }));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn load_rejects_duplicates() {
        let dir = std::env::temp_dir().join(format!("vocab-dup-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vocab.tsv");
        let mut content = String::new();
        for s in SPECIAL_TOKENS {
            content.push_str(&format!("{s}\t0\n"));
        }
        content.push_str("a\t2\na\t1\n");
        std::fs::write(&path, content).unwrap();
        let err = Vocab::load(&path).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateToken { .. }));
        std::fs::remove_dir_all(&dir).ok();
    }
}
