use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Token to id map shared by every encoder of a run. Ids are dense and the
/// four special tokens always occupy ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new()).expect("specials only")
    }
}

impl Vocab {
    /// Specials followed by `tokens` in order. Duplicates are rejected.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in SPECIALS.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if v.index.contains_key(&t) {
                if v.tokens.len() < SPECIALS.len() || !SPECIALS.contains(&t.as_str()) {
                    return Err(Error::InvalidInput(format!("duplicate vocabulary token {t:?}")));
                }
                continue;
            }
            v.index.insert(t.clone(), v.tokens.len() as u32);
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Every token seen at least `min_freq` times, most frequent first, ties
    /// in lexicographic order.
    pub fn build<'a, S, T>(sequences: S, min_freq: usize) -> Self
    where
        S: IntoIterator<Item = T>,
        T: IntoIterator<Item = &'a String>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for seq in sequences {
            for t in seq {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(t, c)| c >= min_freq.max(1) && !SPECIALS.contains(&t))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t)).expect("tokens are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// One token per line; the id is the line number.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Reads a token-per-line file. Missing special tokens are prepended.
    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = s.lines().filter(|l| !l.is_empty()).collect();
        if lines.len() >= SPECIALS.len() && lines[..SPECIALS.len()] == SPECIALS {
            Self::from_tokens(lines[SPECIALS.len()..].iter().copied())
        } else if lines.iter().any(|l| SPECIALS.contains(l)) {
            Err(Error::InvalidInput(format!(
                "{}: special tokens must come first, in order {SPECIALS:?}",
                path.display()
            )))
        } else {
            Self::from_tokens(lines)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn specials_are_first() {
        let v = Vocab::default();
        assert_eq!(v.len(), 4);
        assert_eq!(v.token(PAD), Some("[PAD]"));
        assert_eq!(v.id("[SEP]"), SEP);
        assert_eq!(v.id("anything"), UNK);
    }

    #[test]
    fn build_applies_min_freq_and_orders() {
        let seqs = [toks("b a a c"), toks("b a d")];
        let v = Vocab::build(seqs.iter(), 2);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocab::from_tokens(["x", "y"]).unwrap();
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
        fs::write(&p, "foo\nbar\n").unwrap();
        let ext = Vocab::load(&p).unwrap();
        assert_eq!(ext.id("foo"), 4);
        assert!(Vocab::from_tokens(["x", "x"]).is_err());
    }
}
