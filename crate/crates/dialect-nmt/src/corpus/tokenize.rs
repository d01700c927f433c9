//! Two tokenizers: per-character (the natural unit for han text, no segmenter
//! needed) and whitespace-split (for pre-segmented or latin-script corpora).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizeMode {
    #[default]
    Char,
    Whitespace,
}

impl std::str::FromStr for TokenizeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(TokenizeMode::Char),
            "whitespace" => Ok(TokenizeMode::Whitespace),
            other => Err(format!("unknown tokenize mode {other:?} (char|whitespace)")),
        }
    }
}

/// Char mode: one token per non-whitespace character. Whitespace mode: split
/// on runs of whitespace. Neither mode can yield a token containing
/// whitespace, which keeps vocab TSV files unambiguous.
pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    match mode {
        TokenizeMode::Char => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
        TokenizeMode::Whitespace => text.split_whitespace().map(String::from).collect(),
    }
}

/// Inverse presentation: char tokens concatenate, whitespace tokens join with
/// single spaces. Round-trips `tokenize` output exactly for normalized input.
pub fn detokenize(tokens: &[String], mode: TokenizeMode) -> String {
    match mode {
        TokenizeMode::Char => tokens.concat(),
        TokenizeMode::Whitespace => tokens.join(" "),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_mode_splits_han_text() {
        let toks = tokenize("你好 世界", TokenizeMode::Char);
        assert_eq!(toks, vec!["你", "好", "世", "界"]);
    }

    #[test]
    fn whitespace_mode_collapses_runs() {
        let toks = tokenize("  a  bb\tc ", TokenizeMode::Whitespace);
        assert_eq!(toks, vec!["a", "bb", "c"]);
    }

    #[test]
    fn empty_and_blank_lines_yield_no_tokens() {
        assert!(tokenize("", TokenizeMode::Char).is_empty());
        assert!(tokenize("   ", TokenizeMode::Whitespace).is_empty());
    }

    #[test]
    fn detokenize_round_trips() {
        for (text, mode) in [
            ("你好世界", TokenizeMode::Char),
            ("one two three", TokenizeMode::Whitespace),
        ] {
            let toks = tokenize(text, mode);
            assert_eq!(detokenize(&toks, mode), text);
        }
    }
}
