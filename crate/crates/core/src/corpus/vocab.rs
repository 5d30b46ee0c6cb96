use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const STP: &str = "<stp>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const MASK: &str = "<mask>";

/// Sentinels in their canonical id order.
pub const SENTINELS: [&str; 5] = [PAD, STP, BOS, EOS, MASK];

/// Dense token <-> id mapping with reserved sentinels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pub pad: u32,
    pub stp: u32,
    pub bos: u32,
    pub eos: u32,
    pub mask: u32,
}

impl Vocab {
    /// Builds a vocabulary with the five sentinels at ids `0..5`, followed by
    /// `content` in order.
    pub fn new<I, S>(content: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens = SENTINELS
            .iter()
            .map(|s| s.to_string())
            .chain(content.into_iter().map(Into::into))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Builds a vocabulary from an explicit id order; every sentinel must be
    /// present exactly once.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("vocab token {id} is empty or contains whitespace")));
            }
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocab token `{tok}`")));
            }
        }
        let find = |s: &str| {
            index.get(s).copied().ok_or_else(|| Error::invalid(format!("vocab is missing sentinel `{s}`")))
        };
        Ok(Vocab {
            pad: find(PAD)?,
            stp: find(STP)?,
            bos: find(BOS)?,
            eos: find(EOS)?,
            mask: find(MASK)?,
            tokens,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_sentinel(&self, id: u32) -> bool {
        [self.pad, self.stp, self.bos, self.eos, self.mask].contains(&id)
    }

    /// Encodes whitespace-separated tokens; unknown tokens are an error.
    pub fn encode_line(&self, line: &str, line_no: usize) -> Result<Vec<u32>> {
        line.split_whitespace()
            .map(|t| self.id(t).ok_or_else(|| Error::UnknownToken { token: t.to_string(), line: line_no }))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinels_are_distinct_and_dense() {
        let v = Vocab::new(["A", "B"]).unwrap();
        assert_eq!(v.len(), 7);
        let ids = [v.pad, v.stp, v.bos, v.eos, v.mask];
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                assert_ne!(a, b);
            }
        }
        for id in 0..v.len() as u32 {
            assert_eq!(v.id(v.token(id)), Some(id));
        }
    }

    #[test]
    fn duplicate_and_missing_sentinel_rejected() {
        assert!(Vocab::new(["A", "A"]).is_err());
        assert!(Vocab::from_tokens(vec!["<s>".into(), "</s>".into()]).is_err());
    }

    #[test]
    fn unknown_token_is_named() {
        let v = Vocab::new(["A", "B", "C"]).unwrap();
        match v.encode_line("A ZZZ", 4) {
            Err(Error::UnknownToken { token, line }) => {
                assert_eq!(token, "ZZZ");
                assert_eq!(line, 4);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocab::new(["x", "y"]).unwrap();
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }
}
