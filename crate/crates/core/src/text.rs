//! Tokenization shared by the sparse scorer and the metrics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizerMode {
    Whitespace,
    /// Whitespace split, then every CJK character becomes its own token.
    #[default]
    CharCjk,
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3000..=0x303F      // CJK symbols and punctuation
        | 0x3040..=0x30FF    // kana
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF    // full-width forms
        | 0x20000..=0x2FA1F)
}

pub fn tokenize(text: &str, mode: TokenizerMode) -> Vec<String> {
    let words = text.split_whitespace();
    match mode {
        TokenizerMode::Whitespace => words.map(str::to_string).collect(),
        TokenizerMode::CharCjk => {
            let mut out = Vec::new();
            for word in words {
                let mut run = String::new();
                for c in word.chars() {
                    if is_cjk(c) {
                        if !run.is_empty() {
                            out.push(std::mem::take(&mut run));
                        }
                        out.push(c.to_string());
                    } else {
                        run.push(c);
                    }
                }
                if !run.is_empty() {
                    out.push(run);
                }
            }
            out
        }
    }
}
