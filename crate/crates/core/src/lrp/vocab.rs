use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::corpus::{Corpus, Sentence};
use crate::error::{Error, Result};

pub const BOS: usize = 0;
pub const EOS: usize = 1;
pub const UNK: usize = 2;
pub const PAD: usize = 3;

pub const RESERVED: [&str; 4] = ["<s>", "</s>", "<unk>", "<pad>"];

/// Token ↔ id mapping. Ids 0–3 are `<s>`, `</s>`, `<unk>`, `<pad>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(Error::Contract(format!(
                "vocabulary must start with {RESERVED:?}"
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Contract(format!(
                    "vocabulary entry {i} is not a single token"
                )));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Contract(format!("vocabulary repeats '{t}'")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    /// Reserved tokens followed by corpus tokens by descending frequency
    /// (ties alphabetical), truncated to `max_size` entries overall.
    pub fn build<'a>(
        corpora: impl IntoIterator<Item = &'a Corpus>,
        max_size: usize,
    ) -> Result<Self> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for corpus in corpora {
            for s in corpus.iter() {
                for t in s.tokens() {
                    if !RESERVED.contains(&t.as_str()) {
                        *counts.entry(t.as_str()).or_default() += 1;
                    }
                }
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(
            ranked
                .into_iter()
                .take(max_size.saturating_sub(RESERVED.len()))
                .map(|(t, _)| t.to_string()),
        );
        Vocab::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens().iter().map(|t| self.id(t)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_tokens(
            text.lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_and_encode() {
        let c = Corpus::from_lines("c", ["b a b", "c b"]).unwrap();
        let v = Vocab::build([&c], 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.token(4), Some("b"));
        assert_eq!(v.token(5), Some("a"));
        assert_eq!(v.encode(&Sentence::new("a c b").unwrap()), vec![5, UNK, 4]);
    }

    #[test]
    fn reserved_prefix_required() {
        assert!(Vocab::from_tokens(vec!["x".into()]).is_err());
        let mut t: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        t.push("a".into());
        t.push("a".into());
        assert!(Vocab::from_tokens(t).is_err());
    }

    #[test]
    fn text_round_trip() {
        let c = Corpus::from_lines("c", ["x y z"]).unwrap();
        let v = Vocab::build([&c], 100).unwrap();
        let again = Vocab::from_tokens(v.to_text().lines().map(String::from).collect()).unwrap();
        assert_eq!(v, again);
    }
}
