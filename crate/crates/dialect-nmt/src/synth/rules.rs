//! Injective token-substitution tables: the ground-truth dialect relation of
//! the synthetic pair and the rule-based baseline translator.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use super::SynthError;
use crate::corpus::RawCorpus;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleTable {
    map: BTreeMap<String, String>,
    pub direction: String,
}

impl RuleTable {
    pub fn new(
        pairs: impl IntoIterator<Item = (String, String)>,
        direction: &str,
    ) -> Result<Self, SynthError> {
        let mut map = BTreeMap::new();
        let mut targets = BTreeSet::new();
        for (src, trg) in pairs {
            for tok in [&src, &trg] {
                if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                    return Err(SynthError::Rules(format!(
                        "token {tok:?} is empty or contains whitespace"
                    )));
                }
            }
            if !targets.insert(trg.clone()) {
                return Err(SynthError::Rules(format!(
                    "target {trg:?} appears twice; table must be injective"
                )));
            }
            if map.insert(src.clone(), trg).is_some() {
                return Err(SynthError::Rules(format!("duplicate source {src:?}")));
            }
        }
        Ok(RuleTable {
            map,
            direction: direction.to_string(),
        })
    }

    pub fn empty(direction: &str) -> Self {
        RuleTable {
            map: BTreeMap::new(),
            direction: direction.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.map.get(token).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(s, t)| (s.as_str(), t.as_str()))
    }

    pub fn invert(&self) -> RuleTable {
        let direction = match self.direction.as_str() {
            "a2b" => "b2a".to_string(),
            "b2a" => "a2b".to_string(),
            other => format!("{other}:inverted"),
        };
        RuleTable {
            // Injectivity makes the flipped map collision-free.
            map: self.map.iter().map(|(s, t)| (t.clone(), s.clone())).collect(),
            direction,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let mut out = String::new();
        for (src, trg) in &self.map {
            out.push_str(src);
            out.push('\t');
            out.push_str(trg);
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| SynthError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        f.write_all(out.as_bytes()).map_err(|e| SynthError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path, direction: &str) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|e| SynthError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(src), Some(trg), None) => pairs.push((src.to_string(), trg.to_string())),
                _ => {
                    return Err(SynthError::Rules(format!(
                        "{}:{}: expected exactly `src<TAB>trg`",
                        path.display(),
                        i + 1
                    )))
                }
            }
        }
        RuleTable::new(pairs, direction)
    }
}

/// One simultaneous pass: every token is looked up once against the original
/// table, so a rule's output is never rewritten again. Unknown tokens pass
/// through; length is preserved.
pub fn rule_based_translate(tokens: &[String], table: &RuleTable) -> Vec<String> {
    tokens
        .iter()
        .map(|t| table.get(t).unwrap_or(t).to_string())
        .collect()
}

pub fn rule_translate_corpus(raw: &RawCorpus, table: &RuleTable) -> RawCorpus {
    raw.iter().map(|s| rule_based_translate(s, table)).collect()
}
