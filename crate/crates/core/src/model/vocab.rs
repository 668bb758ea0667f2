//! Character-level vocabulary.
//!
//! Token ids 0 and 1 are reserved for the decoder's begin/end markers;
//! regular characters follow in sorted order, so a vocabulary built from the
//! same character set is always identical.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const NUM_SPECIALS: usize = 2;

#[derive(Debug, Clone)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    /// Build from every distinct character in `text`.
    pub fn from_text(text: &str) -> Vocab {
        let set: BTreeSet<char> = text.chars().collect();
        let chars: Vec<char> = set.into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, NUM_SPECIALS + i)).collect();
        Vocab { chars, index }
    }

    /// Number of token ids, including the two specials.
    pub fn size(&self) -> usize {
        NUM_SPECIALS + self.chars.len()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.index.get(&c).copied().ok_or_else(|| Error::Vocab(format!("character {c:?} not in vocabulary"))))
            .collect()
    }

    /// Decode regular token ids back to text. Special ids are rejected; they
    /// never appear in a finished decode.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        ids.iter()
            .map(|&id| {
                id.checked_sub(NUM_SPECIALS)
                    .and_then(|i| self.chars.get(i))
                    .copied()
                    .ok_or_else(|| Error::Vocab(format!("token id {id} is not a decodable character")))
            })
            .collect()
    }

    /// All regular characters in id order, for serialization.
    pub fn chars_string(&self) -> String {
        self.chars.iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_sorts_characters() {
        let v = Vocab::from_text("banana cab");
        // ' ' < 'a' < 'b' < 'c' < 'n'
        assert_eq!(v.chars_string(), " abcn");
        assert_eq!(v.size(), 5 + NUM_SPECIALS);
        let ids = v.encode("ban").unwrap();
        assert_eq!(v.decode(&ids).unwrap(), "ban");
        assert!(v.encode("z").is_err());
        assert!(v.decode(&[BOS_ID]).is_err());
        assert!(v.decode(&[v.size()]).is_err());
    }

    #[test]
    fn construction_is_order_independent() {
        assert_eq!(Vocab::from_text("abc").chars_string(), Vocab::from_text("cba").chars_string());
    }
}
