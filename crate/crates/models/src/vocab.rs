//! Token vocabulary with fixed special ids.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Specials first, then tokens with count ≥ `min_freq` ordered by
    /// frequency (descending) and then lexicographically.
    pub fn build<S: AsRef<str>>(texts: &[Vec<S>], min_freq: usize) -> Vocab {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in texts.iter().flatten() {
            *counts.entry(t.as_ref()).or_insert(0) += 1;
        }
        let mut ranked: Vec<(&str, usize)> =
            counts.into_iter().filter(|(t, c)| *c >= min_freq.max(1) && !SPECIALS.contains(t)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(ranked.into_iter().map(|(t, _)| t.to_string())).collect::<Vec<_>>();
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(SPECIALS[UNK])
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(v: &[&str]) -> Vec<Vec<String>> {
        v.iter().map(|s| s.split_whitespace().map(str::to_string).collect()).collect()
    }

    #[test]
    fn build_examples() {
        let v = Vocab::build(&texts(&["a b", "a c"]), 1);
        assert_eq!(v.len(), 7);
        assert_eq!(&v.tokens()[4..], ["a", "b", "c"]);
        let v2 = Vocab::build(&texts(&["a b", "a c"]), 2);
        assert_eq!(v2.len(), 5);
        assert_eq!(v2.token(4), "a");
        assert_eq!(Vocab::build(&texts(&["a b", "a c"]), 1), v);
    }

    #[test]
    fn lookup_is_total() {
        let v = Vocab::build(&texts(&["x"]), 1);
        assert_eq!(v.id("never"), UNK);
        assert_eq!(v.encode(&["x", "y"]), vec![4, UNK]);
        assert_eq!(v.token(999), "<unk>");
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
