use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub const BOS: TokenId = TokenId(0);
pub const EOS: TokenId = TokenId(1);
pub const UNK: TokenId = TokenId(2);

pub const BOS_WORD: &str = "<s>";
pub const EOS_WORD: &str = "</s>";
pub const UNK_WORD: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VocabError {
    #[error("duplicate vocabulary entry {word:?} at id {id}")]
    Duplicate { word: String, id: usize },
    #[error("vocabulary must start with {BOS_WORD:?}, {EOS_WORD:?}, {UNK_WORD:?} (ids 0..3)")]
    MissingReserved,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    OutOfRange { id: u32, size: usize },
}

/// Ordered id-to-word table. Ids 0, 1 and 2 are always the sequence-start,
/// sequence-end and unknown markers.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from a full id-ordered word list whose first three
    /// entries are the reserved markers.
    pub fn from_id_order<I, S>(words: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        if words.len() < 3 || words[0] != BOS_WORD || words[1] != EOS_WORD || words[2] != UNK_WORD {
            return Err(VocabError::MissingReserved);
        }
        let mut index = HashMap::with_capacity(words.len());
        for (id, w) in words.iter().enumerate() {
            if index.insert(w.clone(), TokenId(id as u32)).is_some() {
                return Err(VocabError::Duplicate { word: w.clone(), id });
            }
        }
        Ok(Self { words, index })
    }

    /// Reserved markers followed by `words` in first-seen order, duplicates
    /// dropped.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::from_id_order([BOS_WORD, EOS_WORD, UNK_WORD]).expect("reserved markers");
        for w in words {
            v.insert(w.as_ref());
        }
        v
    }

    fn insert(&mut self, word: &str) -> TokenId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = TokenId(self.words.len() as u32);
        self.words.push(word.to_owned());
        self.index.insert(word.to_owned(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id.index()).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    /// Maps a word to its id, or to [`UNK`] if absent.
    pub fn id_or_unk(&self, word: &str) -> TokenId {
        self.id(word).unwrap_or(UNK)
    }

    pub fn is_reserved(id: TokenId) -> bool {
        id.0 < 3
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn check(&self, id: TokenId) -> Result<(), VocabError> {
        if id.index() < self.words.len() {
            Ok(())
        } else {
            Err(VocabError::OutOfRange {
                id: id.0,
                size: self.words.len(),
            })
        }
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<TokenId> {
        words.iter().map(|w| self.id_or_unk(w.as_ref())).collect()
    }

    /// Words for `ids`, skipping the sequence-start and sequence-end markers.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != BOS && id != EOS)
            .map(|&id| self.word(id).unwrap_or(UNK_WORD).to_owned())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::from_words(["what", "is", "what"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.word(BOS), Some(BOS_WORD));
        assert_eq!(v.word(EOS), Some(EOS_WORD));
        assert_eq!(v.word(UNK), Some(UNK_WORD));
        assert_eq!(v.id("what"), Some(TokenId(3)));
        assert_eq!(v.id_or_unk("river"), UNK);
    }

    #[test]
    fn id_order_validation() {
        assert_eq!(
            Vocabulary::from_id_order(["a", "b", "c"]),
            Err(VocabError::MissingReserved)
        );
        let dup = Vocabulary::from_id_order([BOS_WORD, EOS_WORD, UNK_WORD, "x", "x"]);
        assert!(matches!(dup, Err(VocabError::Duplicate { id: 4, .. })));
    }

    #[test]
    fn decode_strips_markers() {
        let v = Vocabulary::from_words(["when", "did"]);
        let ids = vec![BOS, TokenId(3), TokenId(4), EOS];
        assert_eq!(v.decode(&ids), vec!["when", "did"]);
        assert!(v.check(TokenId(5)).is_err());
    }
}
