use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Word vocabulary with hashed character-trigram buckets for unseen words.
///
/// Rows `0..len()` of the embedding table belong to known words; the
/// following `buckets` rows are shared by trigrams of out-of-vocabulary
/// words, whose vector is the mean of their trigram rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    words: BTreeMap<String, usize>,
    buckets: usize,
}

impl Vocab {
    /// Vocabulary over the distinct `tokens`, ids assigned in sorted order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, buckets: usize) -> Self {
        assert!(buckets >= 1, "at least one hash bucket is required");
        let mut words: BTreeMap<String, usize> = tokens.into_iter().map(|t| (t.to_string(), 0)).collect();
        for (i, id) in words.values_mut().enumerate() {
            *id = i;
        }
        Self { words, buckets }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    /// Rows of the embedding table: words then buckets.
    pub fn rows(&self) -> usize {
        self.words.len() + self.buckets
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains_key(token)
    }

    /// Embedding rows averaged to form the vector of `token`.
    pub fn pieces(&self, token: &str) -> Vec<usize> {
        if let Some(&id) = self.words.get(token) {
            return vec![id];
        }
        let padded: Vec<char> = format!("<{token}>").chars().collect();
        let mut ids: Vec<usize> = padded
            .windows(3)
            .map(|w| self.words.len() + (fnv1a(&w.iter().collect::<String>()) % self.buckets as u64) as usize)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
