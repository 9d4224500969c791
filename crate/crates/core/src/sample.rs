//! Classification instances and labels.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentiment polarity in the fixed output order `[negative, positive, neutral]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Positive,
    Neutral,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Positive, Sentiment::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Positive => "positive",
            Sentiment::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(Sentiment::Negative),
            "positive" => Ok(Sentiment::Positive),
            "neutral" => Ok(Sentiment::Neutral),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// Half-open token range `[start, end)` of the aspect term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct AspectSpan {
    pub start: usize,
    pub end: usize,
}

impl AspectSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }

    /// Checks the span is non-empty and lies within `n` tokens.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.is_empty() || self.end > n {
            return Err(Error::InvalidSpan {
                start: self.start,
                end: self.end,
                len: n,
            });
        }
        Ok(())
    }

    /// Row of token `i` once the span is collapsed into one slot at `start`.
    pub fn merged_index(&self, i: usize) -> usize {
        if i < self.start {
            i
        } else if i < self.end {
            self.start
        } else {
            i - self.len() + 1
        }
    }

    /// Number of rows after collapsing the span: `n - len + 1`.
    pub fn merged_len(&self, n: usize) -> usize {
        n - self.len() + 1
    }
}

impl From<[usize; 2]> for AspectSpan {
    fn from(v: [usize; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<AspectSpan> for [usize; 2] {
    fn from(s: AspectSpan) -> Self {
        [s.start, s.end]
    }
}

/// One aspect-level classification instance with its dependency parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub tokens: Vec<String>,
    pub aspect_span: AspectSpan,
    pub label: Sentiment,
    pub dep_heads: Vec<i64>,
    pub dep_rels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description_tokens: Option<Vec<String>>,
}

impl Sample {
    pub fn aspect_tokens(&self) -> &[String] {
        &self.tokens[self.aspect_span.start..self.aspect_span.end]
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Empty("tokens"));
        }
        self.aspect_span.validate(self.tokens.len())?;
        if self.dep_heads.len() != self.tokens.len() || self.dep_rels.len() != self.tokens.len() {
            return Err(Error::InvalidParse(alloc::format!(
                "{} tokens but {} heads and {} relations",
                self.tokens.len(),
                self.dep_heads.len(),
                self.dep_rels.len()
            )));
        }
        Ok(())
    }
}
