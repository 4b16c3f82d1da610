use std::collections::{BTreeSet, HashMap};

use super::Sample;
use crate::error::{Error, Result};

pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

/// Closed whitespace-token vocabulary. Id 0 is end-of-sequence, id 1 is
/// unknown; the remaining tokens are sorted so the mapping depends only on the
/// token set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| t != EOS && t != UNK)
            .collect();
        let mut list = vec![EOS.to_string(), UNK.to_string()];
        list.extend(set);
        let index = list
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            tokens: list,
            index,
        }
    }

    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        Self::from_tokens(samples.into_iter().flat_map(|s| {
            s.input
                .split_whitespace()
                .chain(s.output.split_whitespace())
        }))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> usize {
        0
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Strict encoding: unknown tokens are an error.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| Error::Invalid(format!("token `{t}` not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_first_and_sorted_rest() {
        let v = Vocab::from_tokens(["b", "a", "b", "c"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id(EOS), Some(0));
        assert_eq!(v.id("a"), Some(2));
        assert_eq!(v.decode(&v.encode("c a").unwrap()), "c a");
        assert!(v.encode("zzz").is_err());
    }
}
