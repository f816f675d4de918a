//! Special-token vocabulary and the similarity-score grid.
//!
//! Acting tokens name knowledge sources (plus `NULL`), indicator tokens mark
//! the boundaries of the plan and of each evidence block, and evaluation
//! tokens carry a relevance score on the 11-bin grid `0.0, 0.1, ..., 1.0`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Start of the planned-source list.
pub const SOURCE_START: &str = "[SOURCE]";
/// End of the planned-source list.
pub const SOURCE_END: &str = "[EOS]";
/// Start of one evidence block.
pub const EVIDENCE_START: &str = "[EVIDENCE]";
/// End of one evidence block.
pub const EVIDENCE_END: &str = "[EOE]";
/// The "no external knowledge" decision.
pub const NULL: &str = "NULL";

/// Tokens that can never be used as a source name.
pub const RESERVED: [&str; 5] = [NULL, SOURCE_START, SOURCE_END, EVIDENCE_START, EVIDENCE_END];

pub fn is_reserved(token: &str) -> bool {
    RESERVED.contains(&token)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("score {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("score {0} is not on the 0.1 grid")]
    OffGrid(f64),
}

/// A relevance score on the 11-bin grid, stored as an integer number of tenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RelevanceScore(u8);

impl RelevanceScore {
    pub const ZERO: RelevanceScore = RelevanceScore(0);
    pub const ONE: RelevanceScore = RelevanceScore(10);

    /// Builds a score from its number of tenths (`0..=10`).
    pub fn from_tenths(tenths: u8) -> Result<Self, ScoreError> {
        if tenths > 10 {
            return Err(ScoreError::OutOfRange(f64::from(tenths) / 10.0));
        }
        Ok(RelevanceScore(tenths))
    }

    /// Accepts only values that already sit on the grid.
    pub fn from_grid_value(x: f64) -> Result<Self, ScoreError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(ScoreError::OutOfRange(x));
        }
        let scaled = x * 10.0;
        let nearest = scaled.round();
        if (scaled - nearest).abs() > 1e-9 {
            return Err(ScoreError::OffGrid(x));
        }
        Ok(RelevanceScore(nearest as u8))
    }

    pub fn tenths(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 10.0
    }

    /// The evaluation token, e.g. `"0.7"` or `"1.0"`.
    pub fn token(self) -> String {
        self.to_string()
    }

    /// Parses an evaluation token rendered by [`RelevanceScore::token`].
    pub fn parse_token(token: &str) -> Option<Self> {
        let (int, frac) = token.split_once('.')?;
        if frac.len() != 1 {
            return None;
        }
        let tenths = match (int, frac.as_bytes()[0]) {
            ("0", d @ b'0'..=b'9') => d - b'0',
            ("1", b'0') => 10,
            _ => return None,
        };
        Some(RelevanceScore(tenths))
    }
}

impl fmt::Display for RelevanceScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

impl Serialize for RelevanceScore {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for RelevanceScore {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let x = f64::deserialize(deserializer)?;
        RelevanceScore::from_grid_value(x).map_err(serde::de::Error::custom)
    }
}

/// Maps a real score in `[0, 1]` to the nearest grid value; exact midpoints
/// round up.
///
/// The midpoint test is done on the shortest decimal representation of `x`,
/// so `0.25`, `0.35` and `0.45` all round up even though their binary
/// approximations straddle the midpoint.
pub fn quantize_score(x: f64) -> Result<RelevanceScore, ScoreError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(ScoreError::OutOfRange(x));
    }
    // `Display` for f64 prints the shortest round-tripping decimal and never
    // switches to exponent notation.
    let repr = format!("{x}");
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((repr.as_str(), ""));
    if int_part == "1" {
        return Ok(RelevanceScore::ONE);
    }
    let mut digits = frac_part.bytes().map(|b| b - b'0');
    let tenths = digits.next().unwrap_or(0);
    let round_up = digits.next().is_some_and(|d| d >= 5);
    Ok(RelevanceScore(tenths + u8::from(round_up)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_score(0.0).unwrap().value(), 0.0);
        assert_eq!(quantize_score(0.25).unwrap().value(), 0.3);
        assert_eq!(quantize_score(0.7499).unwrap().value(), 0.7);
        assert_eq!(quantize_score(0.95).unwrap(), RelevanceScore::ONE);
        assert_eq!(quantize_score(1.0).unwrap(), RelevanceScore::ONE);
        assert_eq!(quantize_score(0.1 + 0.2).unwrap().tenths(), 3);
        assert_eq!(quantize_score(1e-7).unwrap(), RelevanceScore::ZERO);
    }

    #[test]
    fn quantize_rejects_out_of_range() {
        assert!(matches!(quantize_score(-0.01), Err(ScoreError::OutOfRange(_))));
        assert!(matches!(quantize_score(1.0001), Err(ScoreError::OutOfRange(_))));
        assert!(quantize_score(f64::NAN).is_err());
    }

    #[test]
    fn tokens_render_with_one_decimal() {
        let all: Vec<String> = (0..=10).map(|t| RelevanceScore(t).token()).collect();
        assert_eq!(all.first().unwrap(), "0.0");
        assert_eq!(all[7], "0.7");
        assert_eq!(all.last().unwrap(), "1.0");
        for t in all {
            assert_eq!(RelevanceScore::parse_token(&t).unwrap().token(), t);
        }
        assert!(RelevanceScore::parse_token("1.1").is_none());
        assert!(RelevanceScore::parse_token("0.75").is_none());
    }

    #[test]
    fn serde_keeps_grid() {
        let s = RelevanceScore(8);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "0.8");
        assert_eq!(serde_json::from_str::<RelevanceScore>(&json).unwrap(), s);
        assert!(serde_json::from_str::<RelevanceScore>("0.75").is_err());
    }

    #[test]
    fn reserved_tokens() {
        assert!(is_reserved("NULL"));
        assert!(is_reserved("[EOE]"));
        assert!(!is_reserved("PERSONA"));
    }
}
