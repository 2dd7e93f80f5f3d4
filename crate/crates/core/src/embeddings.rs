//! Pretrained word-vector loading (GloVe text format) and the embedding
//! dispersion study: do words frequent at a location type cluster in
//! embedding space, compared to sampling from the whole corpus?

use std::collections::BTreeMap;
use std::io::BufRead;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::Post;

pub const DEFAULT_SAMPLE_SIZE: usize = 200;
/// A location needs token support at least this many times the sample size.
pub const SUPPORT_FACTOR: u64 = 5;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("no valid embedding lines for dimension {0}")]
    NoValidLines(usize),
    #[error("corpus too small: {have} tokens, need {need}")]
    CorpusTooSmall { have: u64, need: u64 },
    #[error("every sampled word is missing from the embedding table")]
    AllOov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OovPolicy {
    /// re-draw the sample when the word has no embedding
    Skip,
    /// substitute the zero vector
    Zero,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub dimension: usize,
    pub oov_policy: OovPolicy,
    vectors: BTreeMap<String, Vec<f64>>,
    pub skipped_lines: usize,
}

impl EmbeddingTable {
    /// Parses GloVe text format: token, then `dimension` decimals, space
    /// separated. Lines with the wrong arity are counted and skipped.
    pub fn load<R: BufRead>(reader: R, dimension: usize) -> Result<Self, EmbeddingError> {
        let mut vectors = BTreeMap::new();
        let mut skipped = 0usize;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = match parts.next() {
                Some(t) => t.to_string(),
                None => {
                    skipped += 1;
                    continue;
                }
            };
            let vals: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            match vals {
                Ok(v) if v.len() == dimension => {
                    vectors.insert(token, v);
                }
                _ => skipped += 1,
            }
        }
        if vectors.is_empty() {
            return Err(EmbeddingError::NoValidLines(dimension));
        }
        Ok(EmbeddingTable {
            dimension,
            oov_policy: OovPolicy::Skip,
            vectors,
            skipped_lines: skipped,
        })
    }

    pub fn from_map(vectors: BTreeMap<String, Vec<f64>>, dimension: usize) -> Self {
        debug_assert!(vectors.values().all(|v| v.len() == dimension));
        EmbeddingTable {
            dimension,
            oov_policy: OovPolicy::Skip,
            vectors,
            skipped_lines: 0,
        }
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Per-dimension population standard deviation over all stored vectors.
    /// Used to scale randomly initialized embedding rows. An empty table
    /// yields zeros.
    pub fn per_dimension_std(&self) -> Vec<f64> {
        if self.vectors.is_empty() {
            return vec![0.0; self.dimension];
        }
        let n = self.vectors.len() as f64;
        let mut mean = vec![0.0; self.dimension];
        for v in self.vectors.values() {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; self.dimension];
        for v in self.vectors.values() {
            for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
                let d = x - m;
                *s += d * d;
            }
        }
        var.iter().map(|s| (s / n).sqrt()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionReport {
    pub location: String,
    pub sample_size: usize,
    pub avg_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DispersionOutcome {
    Scored(DispersionReport),
    InsufficientSupport { location: String, support: u64, required: u64 },
}

fn support_counts<'a>(
    posts: &'a [Post],
    location: Option<&str>,
) -> (Vec<&'a str>, Vec<u64>, u64) {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut total = 0u64;
    for p in posts {
        if let Some(loc) = location {
            if !p.place_types.contains(loc) {
                continue;
            }
        }
        for t in &p.tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
            total += 1;
        }
    }
    let words: Vec<&str> = counts.keys().copied().collect();
    let weights: Vec<u64> = words.iter().map(|w| counts[w]).collect();
    (words, weights, total)
}

/// Mean across dimensions of the per-dimension population std over a
/// support-weighted sample of word instances.
fn dispersion_of_sample(
    words: &[&str],
    weights: &[u64],
    table: &EmbeddingTable,
    sample_size: usize,
    seed: u64,
) -> Result<f64, EmbeddingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = WeightedIndex::new(weights.iter().map(|&w| w as f64))
        .map_err(|_| EmbeddingError::AllOov)?;
    let zero = vec![0.0; table.dimension];
    let mut sample: Vec<&[f64]> = Vec::with_capacity(sample_size);
    let mut draws = 0u64;
    // OOV words are re-drawn under Skip; bail out if the table never hits.
    let max_draws = (sample_size as u64) * 1000;
    while sample.len() < sample_size {
        if draws > max_draws {
            return Err(EmbeddingError::AllOov);
        }
        draws += 1;
        let w = words[dist.sample(&mut rng)];
        match table.get(w) {
            Some(v) => sample.push(v),
            None => match table.oov_policy {
                OovPolicy::Skip => continue,
                OovPolicy::Zero => sample.push(&zero),
            },
        }
    }
    let n = sample.len() as f64;
    let mut avg = 0.0;
    for d in 0..table.dimension {
        let mean: f64 = sample.iter().map(|v| v[d]).sum::<f64>() / n;
        let var: f64 = sample
            .iter()
            .map(|v| {
                let diff = v[d] - mean;
                diff * diff
            })
            .sum::<f64>()
            / n;
        avg += var.sqrt();
    }
    Ok(avg / table.dimension as f64)
}

/// Dispersion of words sampled from one location type, probability
/// proportional to support within the location.
pub fn location_dispersion(
    posts: &[Post],
    location: &str,
    table: &EmbeddingTable,
    sample_size: usize,
    seed: u64,
) -> Result<DispersionOutcome, EmbeddingError> {
    let (words, weights, total) = support_counts(posts, Some(location));
    let required = SUPPORT_FACTOR * sample_size as u64;
    if total < required {
        return Ok(DispersionOutcome::InsufficientSupport {
            location: location.to_string(),
            support: total,
            required,
        });
    }
    let avg_std = dispersion_of_sample(&words, &weights, table, sample_size, seed)?;
    Ok(DispersionOutcome::Scored(DispersionReport {
        location: location.to_string(),
        sample_size,
        avg_std,
    }))
}

/// Same computation sampling from the whole corpus; the random baseline.
pub fn random_dispersion(
    posts: &[Post],
    table: &EmbeddingTable,
    sample_size: usize,
    seed: u64,
) -> Result<f64, EmbeddingError> {
    let (words, weights, total) = support_counts(posts, None);
    if total < sample_size as u64 {
        return Err(EmbeddingError::CorpusTooSmall {
            have: total,
            need: sample_size as u64,
        });
    }
    dispersion_of_sample(&words, &weights, table, sample_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::io::Cursor;

    fn post(tokens: &[&str], tag: &str) -> Post {
        Post {
            id: "p".to_string(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            place_types: BTreeSet::from([tag.to_string()]),
        }
    }

    #[test]
    fn load_parses_valid_line() {
        let t = EmbeddingTable::load(Cursor::new("hi 0.1 0.2"), 2).unwrap();
        assert_eq!(t.get("hi"), Some(&[0.1, 0.2][..]));
        assert_eq!(t.skipped_lines, 0);
    }

    #[test]
    fn load_skips_wrong_arity() {
        let t = EmbeddingTable::load(Cursor::new("hi 0.1 0.2\nbad 0.3"), 2).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.skipped_lines, 1);
    }

    #[test]
    fn load_empty_errors() {
        assert!(EmbeddingTable::load(Cursor::new(""), 2).is_err());
    }

    #[test]
    fn identical_vectors_zero_dispersion() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![0.5, 0.5]);
        m.insert("b".to_string(), vec![0.5, 0.5]);
        let table = EmbeddingTable::from_map(m, 2);
        let posts: Vec<Post> = (0..200).map(|_| post(&["a", "b", "a", "b", "a"], "x")).collect();
        match location_dispersion(&posts, "x", &table, 200, 1).unwrap() {
            DispersionOutcome::Scored(r) => assert_eq!(r.avg_std, 0.0),
            _ => panic!("expected scored"),
        }
        let r = random_dispersion(&posts, &table, 200, 1).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn two_symmetric_vectors_approach_unit_std() {
        // vectors [0,0] and [2,2] with equal support: per-dimension
        // population std of a fair +-1 offset is 1
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![0.0, 0.0]);
        m.insert("b".to_string(), vec![2.0, 2.0]);
        let table = EmbeddingTable::from_map(m, 2);
        let posts: Vec<Post> = (0..5000).map(|_| post(&["a", "b"], "x")).collect();
        let r = random_dispersion(&posts, &table, 5000, 11).unwrap();
        assert!((r - 1.0).abs() < 0.05, "got {r}");
    }

    #[test]
    fn insufficient_support_is_distinguished() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![0.0]);
        let table = EmbeddingTable::from_map(m, 1);
        let posts = vec![post(&["a", "a"], "x")];
        match location_dispersion(&posts, "x", &table, 200, 0).unwrap() {
            DispersionOutcome::InsufficientSupport { required, .. } => {
                assert_eq!(required, 1000);
            }
            _ => panic!("expected insufficient support"),
        }
    }

    #[test]
    fn fixed_seed_reproducible() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![0.0, 1.0]);
        m.insert("b".to_string(), vec![2.0, 3.0]);
        m.insert("c".to_string(), vec![-1.0, 0.5]);
        let table = EmbeddingTable::from_map(m, 2);
        let posts: Vec<Post> = (0..300).map(|_| post(&["a", "b", "c", "a"], "x")).collect();
        let r1 = location_dispersion(&posts, "x", &table, 200, 5).unwrap();
        let r2 = location_dispersion(&posts, "x", &table, 200, 5).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn translation_invariance_and_scaling() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![0.0, 1.0]);
        m.insert("b".to_string(), vec![2.0, 3.0]);
        let table = EmbeddingTable::from_map(m.clone(), 2);
        let shifted: BTreeMap<String, Vec<f64>> = m
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|x| x + 10.0).collect()))
            .collect();
        let scaled: BTreeMap<String, Vec<f64>> = m
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|x| x * 3.0).collect()))
            .collect();
        let table_shift = EmbeddingTable::from_map(shifted, 2);
        let table_scale = EmbeddingTable::from_map(scaled, 2);
        let posts: Vec<Post> = (0..300).map(|_| post(&["a", "b"], "x")).collect();
        let base = random_dispersion(&posts, &table, 200, 9).unwrap();
        let shift = random_dispersion(&posts, &table_shift, 200, 9).unwrap();
        let scale = random_dispersion(&posts, &table_scale, 200, 9).unwrap();
        assert!((base - shift).abs() < 1e-12);
        assert!((scale - 3.0 * base).abs() < 1e-9);
    }

    #[test]
    fn oov_redraw_ignores_missing_words() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![1.0, 1.0]);
        let table = EmbeddingTable::from_map(m, 2);
        // "zzz" has support but no embedding; samples must all be "a"
        let posts: Vec<Post> = (0..300).map(|_| post(&["a", "zzz"], "x")).collect();
        let r = random_dispersion(&posts, &table, 200, 3).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn per_dimension_std_hand_check() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![0.0, 2.0]);
        m.insert("b".to_string(), vec![2.0, 2.0]);
        let table = EmbeddingTable::from_map(m, 2);
        let std = table.per_dimension_std();
        assert!((std[0] - 1.0).abs() < 1e-12);
        assert!(std[1].abs() < 1e-12);
    }
}
