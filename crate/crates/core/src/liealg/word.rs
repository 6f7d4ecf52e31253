use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A word `β = (β₁,…,β_N)` naming the right-nested bracket
/// `[f_{β₁},[f_{β₂},[…,f_{β_N}]…]]`. Indices are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BracketWord {
    indices: Vec<usize>,
}

impl BracketWord {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidWord {
                word: String::new(),
                reason: "words must be nonempty".into(),
            });
        }
        if indices.contains(&0) {
            return Err(Error::InvalidWord {
                word: format!("{indices:?}"),
                reason: "indices are 1-based".into(),
            });
        }
        Ok(BracketWord { indices })
    }

    pub fn letter(j: usize) -> Self {
        Self::new(vec![j]).expect("positive letter")
    }

    /// `(1^k, 2)` style word: `k` copies of `a` followed by `b`.
    pub fn power(a: usize, k: usize, b: usize) -> Self {
        let mut v = vec![a; k];
        v.push(b);
        Self::new(v).expect("positive letters")
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn depth(&self) -> usize {
        self.indices.len()
    }

    pub fn head(&self) -> usize {
        self.indices[0]
    }

    /// The word with the first letter removed, `None` for depth 1.
    pub fn tail(&self) -> Option<BracketWord> {
        (self.depth() > 1).then(|| BracketWord {
            indices: self.indices[1..].to_vec(),
        })
    }

    pub fn max_letter(&self) -> usize {
        *self.indices.iter().max().expect("nonempty")
    }

    /// All words over `s` letters with depth `1..=max_depth`, ordered by
    /// depth then lexicographically.
    pub fn all_up_to(s: usize, max_depth: usize) -> Vec<BracketWord> {
        let mut out = Vec::new();
        let mut layer: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..max_depth {
            let mut next = Vec::with_capacity(layer.len() * s);
            for w in &layer {
                for j in 1..=s {
                    let mut v = w.clone();
                    v.push(j);
                    next.push(v);
                }
            }
            out.extend(next.iter().cloned().map(|indices| BracketWord { indices }));
            layer = next;
        }
        out
    }
}

impl fmt::Display for BracketWord {
    /// Concatenated digits (`112`) when every letter is below 10,
    /// dot-separated (`1.10.2`) otherwise.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sep = if self.max_letter() < 10 { "" } else { "." };
        let parts: Vec<String> = self.indices.iter().map(usize::to_string).collect();
        write!(f, "{}", parts.join(sep))
    }
}

impl FromStr for BracketWord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidWord {
            word: s.to_string(),
            reason: reason.to_string(),
        };
        let s = s.trim();
        let indices: Vec<usize> = if s.contains('.') || s.contains(',') {
            s.split(['.', ','])
                .map(|p| p.trim().parse::<usize>().map_err(|_| bad("non-numeric letter")))
                .collect::<Result<_>>()?
        } else {
            s.chars()
                .map(|c| {
                    c.to_digit(10)
                        .map(|d| d as usize)
                        .ok_or_else(|| bad("non-numeric letter"))
                })
                .collect::<Result<_>>()?
        };
        BracketWord::new(indices).map_err(|e| match e {
            Error::InvalidWord { reason, .. } => bad(&reason),
            other => other,
        })
    }
}

impl Serialize for BracketWord {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BracketWord {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spelling_roundtrip() {
        let w: BracketWord = "112".parse().unwrap();
        assert_eq!(w.indices(), &[1, 1, 2]);
        assert_eq!(w.to_string(), "112");
        let long = BracketWord::new(vec![1, 10, 2]).unwrap();
        assert_eq!(long.to_string(), "1.10.2");
        assert_eq!(long.to_string().parse::<BracketWord>().unwrap(), long);
    }

    #[test]
    fn rejects_empty_and_zero() {
        assert!("".parse::<BracketWord>().is_err());
        assert!("102".parse::<BracketWord>().is_err());
        assert!("1a".parse::<BracketWord>().is_err());
    }

    #[test]
    fn enumeration_counts() {
        let ws = BracketWord::all_up_to(2, 4);
        assert_eq!(ws.len(), 2 + 4 + 8 + 16);
        assert_eq!(ws[0].to_string(), "1");
        assert_eq!(ws[2].to_string(), "11");
    }

    #[test]
    fn tail_drops_head() {
        let w = BracketWord::power(1, 2, 2);
        assert_eq!(w.head(), 1);
        assert_eq!(w.tail().unwrap().to_string(), "12");
        assert!(BracketWord::letter(2).tail().is_none());
    }
}
