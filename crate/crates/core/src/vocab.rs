//! Frequency-ranked vocabulary over the enriched corpus: top-K words get
//! dense class ids, everything else maps to `<unk>`, and one extra class is
//! reserved for context padding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Post;

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("K must be >= 1")]
    BadK,
    #[error("vocabulary file is inconsistent: {0}")]
    BadFile(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type ClassId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_class: BTreeMap<String, ClassId>,
    class_to_word: Vec<String>,
    counts: BTreeMap<String, u64>,
    k: usize,
}

/// On-disk form: the ordered class list plus counts. Reloading reproduces
/// identical ids because the list order is the id order.
#[derive(Serialize, Deserialize)]
struct VocabFile {
    k: usize,
    classes: Vec<String>,
    counts: BTreeMap<String, u64>,
}

impl Vocabulary {
    /// Counts every token in `posts` and keeps the `k` most frequent, ties
    /// broken lexicographically so the class space is reproducible.
    pub fn build(posts: &[Post], k: usize) -> Result<Self, VocabError> {
        if k == 0 {
            return Err(VocabError::BadK);
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for p in posts {
            for t in &p.tokens {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
        }
        if counts.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        let mut ranked: Vec<(&String, &u64)> = counts.iter().collect();
        // BTreeMap iteration is lexicographic, so a stable sort by count
        // descending leaves ties in lexicographic order.
        ranked.sort_by(|a, b| b.1.cmp(a.1));
        let class_to_word: Vec<String> =
            ranked.iter().take(k).map(|(w, _)| (*w).clone()).collect();
        let word_to_class = class_to_word
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Vocabulary {
            word_to_class,
            class_to_word,
            counts,
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Total classes including `<unk>` and pad.
    pub fn num_classes(&self) -> usize {
        self.k + 2
    }

    pub fn unk_id(&self) -> ClassId {
        self.k
    }

    pub fn pad_id(&self) -> ClassId {
        self.k + 1
    }

    /// In-vocabulary tokens map to their id, everything else to `<unk>`.
    /// Never returns the pad id.
    pub fn encode(&self, token: &str) -> ClassId {
        self.word_to_class
            .get(token)
            .copied()
            .unwrap_or_else(|| self.unk_id())
    }

    pub fn decode(&self, id: ClassId) -> &str {
        if id < self.k {
            &self.class_to_word[id]
        } else if id == self.unk_id() {
            UNK_TOKEN
        } else {
            PAD_TOKEN
        }
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    /// Fraction of corpus token instances that map to ids below K.
    pub fn coverage(&self, posts: &[Post]) -> Result<f64, VocabError> {
        let mut total = 0u64;
        let mut covered = 0u64;
        for p in posts {
            for t in &p.tokens {
                total += 1;
                if self.word_to_class.contains_key(t.as_str()) {
                    covered += 1;
                }
            }
        }
        if total == 0 {
            return Err(VocabError::EmptyCorpus);
        }
        Ok(covered as f64 / total as f64)
    }

    pub fn to_json(&self) -> Result<String, VocabError> {
        let file = VocabFile {
            k: self.k,
            classes: self.class_to_word.clone(),
            counts: self.counts.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self, VocabError> {
        let file: VocabFile = serde_json::from_str(json)?;
        if file.classes.len() != file.k {
            return Err(VocabError::BadFile(format!(
                "class list has {} entries, expected K = {}",
                file.classes.len(),
                file.k
            )));
        }
        let word_to_class = file
            .classes
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Ok(Vocabulary {
            word_to_class,
            class_to_word: file.classes,
            counts: file.counts,
            k: file.k,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn post(tokens: &[&str]) -> Post {
        Post {
            id: "t".to_string(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            place_types: BTreeSet::from(["restaurant".to_string()]),
        }
    }

    #[test]
    fn single_word_vocab() {
        let posts = vec![post(&["a", "a", "a"])];
        let v = Vocabulary::build(&posts, 1).unwrap();
        assert_eq!(v.encode("a"), 0);
        assert_eq!(v.unk_id(), 1);
        assert_eq!(v.pad_id(), 2);
        assert_eq!(v.num_classes(), 3);
    }

    #[test]
    fn lexicographic_tie_break() {
        // counts {a:5, b:5, c:1}, K=2 -> a:0, b:1
        let posts = vec![post(&["b", "a", "b", "a", "b", "a", "b", "a", "b", "a", "c"])];
        let v = Vocabulary::build(&posts, 2).unwrap();
        assert_eq!(v.encode("a"), 0);
        assert_eq!(v.encode("b"), 1);
        assert_eq!(v.encode("c"), v.unk_id());
    }

    #[test]
    fn empty_corpus_errors() {
        assert!(Vocabulary::build(&[], 5).is_err());
    }

    #[test]
    fn oov_maps_to_unk_never_pad() {
        let posts = vec![post(&["a", "b"])];
        let v = Vocabulary::build(&posts, 1).unwrap();
        assert_eq!(v.encode("zzz"), v.unk_id());
        assert_ne!(v.encode("zzz"), v.pad_id());
    }

    #[test]
    fn encode_decode_inverse() {
        let posts = vec![post(&["a", "b", "c", "a", "b", "a"])];
        let v = Vocabulary::build(&posts, 3).unwrap();
        for i in 0..v.k() {
            assert_eq!(v.encode(v.decode(i)), i);
        }
    }

    #[test]
    fn coverage_full_and_partial() {
        let posts = vec![post(&["a", "a", "a"])];
        let v = Vocabulary::build(&posts, 1).unwrap();
        assert_eq!(v.coverage(&posts).unwrap(), 1.0);

        // 9 in-vocab instances, 1 out
        let posts2 = vec![post(&["a", "a", "a", "a", "a", "a", "a", "a", "a", "z"])];
        let v2 = Vocabulary::build(&posts2, 1).unwrap();
        assert!((v2.coverage(&posts2).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn coverage_monotone_in_k() {
        let posts = vec![post(&["a", "a", "b", "b", "c", "d", "e"])];
        let mut prev = 0.0;
        for k in 1..=5 {
            let v = Vocabulary::build(&posts, k).unwrap();
            let c = v.coverage(&posts).unwrap();
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn top_k_optimality_brute_force() {
        let posts = vec![post(&["a", "a", "a", "b", "b", "c", "c", "d", "e"])];
        let v = Vocabulary::build(&posts, 2).unwrap();
        let words = ["a", "b", "c", "d", "e"];
        let selected_sum: u64 = (0..v.k()).map(|i| v.count(v.decode(i))).sum();
        for i in 0..words.len() {
            for j in (i + 1)..words.len() {
                let other: u64 = v.count(words[i]) + v.count(words[j]);
                assert!(selected_sum >= other);
            }
        }
    }

    #[test]
    fn json_round_trip_preserves_ids() {
        let posts = vec![post(&["a", "b", "c", "a", "b", "a"])];
        let v = Vocabulary::build(&posts, 3).unwrap();
        let reloaded = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(v, reloaded);
        for w in ["a", "b", "c", "zzz"] {
            assert_eq!(v.encode(w), reloaded.encode(w));
        }
    }
}
