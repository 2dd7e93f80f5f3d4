//! Per-location-type divergence statistics: which location types shift the
//! word distribution away from the corpus-wide unigram distribution, and
//! which words drive the shift.
//!
//! The per-location score is the mean Pearson chi-square contribution
//! (o - e)^2 / e over words with at least `min_support` occurrences inside
//! the location, where the expectation e = N_L * p(w) comes from the global
//! unigram distribution (which includes the location's own tokens).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Post;

pub const DEFAULT_MIN_SUPPORT: u64 = 5;

#[derive(Debug, Error)]
pub enum DivergenceError {
    #[error("no posts supplied")]
    EmptyCorpus,
    #[error("location type {0:?} not present in catalog")]
    UnknownLocation(String),
}

/// Dense index space over every location-type tag observed in a corpus,
/// with per-tag post support and the frequent subset used by the restricted
/// model variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationCatalog {
    type_to_index: BTreeMap<String, usize>,
    types: Vec<String>,
    /// posts carrying each tag, indexed like `types`
    support: Vec<u64>,
    frequent_subset: Vec<String>,
}

impl LocationCatalog {
    /// Enumerates every tag in the corpus. Index order is lexicographic.
    /// The frequent subset keeps tags with post support >= `threshold`,
    /// ordered by support descending then lexicographic.
    pub fn build(posts: &[Post], frequent_threshold: u64) -> Result<Self, DivergenceError> {
        if posts.is_empty() {
            return Err(DivergenceError::EmptyCorpus);
        }
        let mut support_map: BTreeMap<String, u64> = BTreeMap::new();
        for p in posts {
            for t in &p.place_types {
                *support_map.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let types: Vec<String> = support_map.keys().cloned().collect();
        let type_to_index = types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let support: Vec<u64> = types.iter().map(|t| support_map[t]).collect();
        let mut frequent: Vec<(String, u64)> = support_map
            .into_iter()
            .filter(|(_, s)| *s >= frequent_threshold)
            .collect();
        frequent.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(LocationCatalog {
            type_to_index,
            types,
            support,
            frequent_subset: frequent.into_iter().map(|(t, _)| t).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.type_to_index.get(tag).copied()
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn support_of(&self, tag: &str) -> Option<u64> {
        self.index_of(tag).map(|i| self.support[i])
    }

    pub fn frequent_subset(&self) -> &[String] {
        &self.frequent_subset
    }

    /// Catalog restricted to the frequent subset, re-indexed densely in the
    /// subset's order. Used for the 62-type model variants.
    pub fn restrict_to_frequent(&self) -> LocationCatalog {
        let types: Vec<String> = self.frequent_subset.clone();
        let type_to_index = types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let support = types
            .iter()
            .map(|t| self.support_of(t).unwrap_or(0))
            .collect();
        LocationCatalog {
            type_to_index,
            types: types.clone(),
            support,
            frequent_subset: types,
        }
    }

    /// Multi-hot encoding of a post's tags. Tags outside the catalog are
    /// ignored, so the vector may be all zeros.
    pub fn multi_hot(&self, post: &Post) -> Vec<f64> {
        let mut v = vec![0.0; self.types.len()];
        for t in &post.place_types {
            if let Some(i) = self.index_of(t) {
                v[i] = 1.0;
            }
        }
        v
    }
}

/// Chi-square outcome for one location type.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareReport {
    pub location: String,
    pub score: f64,
    pub qualifying_words: usize,
    /// word -> (o - e)^2 / e, only over words passing min support
    pub contributions: BTreeMap<String, f64>,
}

/// Locations where no word reaches the minimum support are dropped, not
/// scored zero.
#[derive(Debug, Clone, PartialEq)]
pub enum ChiSquareOutcome {
    Scored(ChiSquareReport),
    Dropped { location: String },
}

fn global_counts(posts: &[Post]) -> (BTreeMap<&str, u64>, u64) {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    let mut total = 0u64;
    for p in posts {
        for t in &p.tokens {
            *counts.entry(t.as_str()).or_insert(0) += 1;
            total += 1;
        }
    }
    (counts, total)
}

/// Scores one location type against the global unigram distribution.
pub fn chi_square_location(
    posts: &[Post],
    location: &str,
    min_support: u64,
) -> Result<ChiSquareOutcome, DivergenceError> {
    let (global, total) = global_counts(posts);
    if total == 0 {
        return Err(DivergenceError::EmptyCorpus);
    }
    let mut local: BTreeMap<&str, u64> = BTreeMap::new();
    let mut local_total = 0u64;
    let mut seen = false;
    for p in posts {
        if p.place_types.contains(location) {
            seen = true;
            for t in &p.tokens {
                *local.entry(t.as_str()).or_insert(0) += 1;
                local_total += 1;
            }
        }
    }
    if !seen {
        return Err(DivergenceError::UnknownLocation(location.to_string()));
    }
    let mut contributions = BTreeMap::new();
    for (word, &o) in &local {
        if o < min_support {
            continue;
        }
        let p_w = global[word] as f64 / total as f64;
        let expected = local_total as f64 * p_w;
        let diff = o as f64 - expected;
        contributions.insert(word.to_string(), diff * diff / expected);
    }
    if contributions.is_empty() {
        return Ok(ChiSquareOutcome::Dropped {
            location: location.to_string(),
        });
    }
    let score = contributions.values().sum::<f64>() / contributions.len() as f64;
    Ok(ChiSquareOutcome::Scored(ChiSquareReport {
        location: location.to_string(),
        score,
        qualifying_words: contributions.len(),
        contributions,
    }))
}

/// Top-n words by contribution, descending, ties lexicographic.
pub fn significant_words(report: &ChiSquareReport, top_n: usize) -> Vec<String> {
    let mut words: Vec<(&String, &f64)> = report.contributions.iter().collect();
    words.sort_by(|a, b| b.1.partial_cmp(a.1).unwrap().then_with(|| a.0.cmp(b.0)));
    words.into_iter().take(top_n).map(|(w, _)| w.clone()).collect()
}

/// Aggregate over the catalog's frequent subset.
#[derive(Debug, Clone)]
pub struct ChiSquareSummary {
    pub mean_score: f64,
    pub scored: usize,
    pub dropped: usize,
    pub above_one: usize,
}

pub fn chi_square_all(
    posts: &[Post],
    catalog: &LocationCatalog,
    min_support: u64,
) -> Result<(BTreeMap<String, ChiSquareOutcome>, ChiSquareSummary), DivergenceError> {
    let mut outcomes = BTreeMap::new();
    let mut sum = 0.0;
    let mut scored = 0usize;
    let mut dropped = 0usize;
    let mut above_one = 0usize;
    for tag in catalog.frequent_subset() {
        let outcome = chi_square_location(posts, tag, min_support)?;
        match &outcome {
            ChiSquareOutcome::Scored(r) => {
                sum += r.score;
                scored += 1;
                if r.score > 1.0 {
                    above_one += 1;
                }
            }
            ChiSquareOutcome::Dropped { .. } => dropped += 1,
        }
        outcomes.insert(tag.clone(), outcome);
    }
    let mean_score = if scored > 0 { sum / scored as f64 } else { 0.0 };
    Ok((
        outcomes,
        ChiSquareSummary {
            mean_score,
            scored,
            dropped,
            above_one,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn post(tokens: &[&str], tags: &[&str]) -> Post {
        Post {
            id: "t".to_string(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            place_types: tags.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
        }
    }

    #[test]
    fn catalog_counts_post_support() {
        let posts = vec![post(&["x", "y"], &["a"]), post(&["x", "y"], &["a", "b"])];
        let cat = LocationCatalog::build(&posts, 1).unwrap();
        assert_eq!(cat.support_of("a"), Some(2));
        assert_eq!(cat.support_of("b"), Some(1));
        assert_eq!(cat.len(), 2);
    }

    #[test]
    fn frequent_subset_threshold() {
        let posts = vec![post(&["x", "y"], &["a"]), post(&["x", "y"], &["a", "b"])];
        let cat = LocationCatalog::build(&posts, 2).unwrap();
        assert_eq!(cat.frequent_subset(), &["a".to_string()]);
    }

    #[test]
    fn multi_hot_ignores_unknown_tags() {
        let posts = vec![
            post(&["x", "y"], &["a"]),
            post(&["x", "y"], &["a"]),
            post(&["x", "y"], &["b"]),
        ];
        let cat = LocationCatalog::build(&posts, 2).unwrap();
        let restricted = cat.restrict_to_frequent();
        assert_eq!(restricted.len(), 1);
        let v = restricted.multi_hot(&post(&["x"], &["a", "b"]));
        assert_eq!(v, vec![1.0]);
        let w = restricted.multi_hot(&post(&["x"], &["b"]));
        assert_eq!(w, vec![0.0]);
    }

    #[test]
    fn identical_distribution_scores_zero() {
        // location "a" holds half of a corpus whose two halves are identical,
        // with power-of-two counts so expectations are exact in binary.
        let base: Vec<&str> = std::iter::repeat("x")
            .take(8)
            .chain(std::iter::repeat("y").take(8))
            .collect();
        let posts = vec![post(&base, &["a"]), post(&base, &["b"])];
        match chi_square_location(&posts, "a", 5).unwrap() {
            ChiSquareOutcome::Scored(r) => {
                assert_eq!(r.score, 0.0);
                assert_eq!(r.qualifying_words, 2);
            }
            _ => panic!("expected scored outcome"),
        }
    }

    #[test]
    fn hand_computed_biased_location() {
        // global p(a) = p(b) = 0.5; location holds 10 tokens, all "a".
        // contribution_a = (10 - 5)^2 / 5 = 5; "b" absent so only "a" qualifies.
        let loc_tokens = vec!["a"; 10];
        let rest: Vec<&str> = std::iter::repeat("b")
            .take(10)
            .collect();
        let posts = vec![post(&loc_tokens, &["loc"]), post(&rest, &["other"])];
        match chi_square_location(&posts, "loc", 5).unwrap() {
            ChiSquareOutcome::Scored(r) => {
                assert!((r.score - 5.0).abs() < 1e-12);
                assert_eq!(r.qualifying_words, 1);
            }
            _ => panic!("expected scored outcome"),
        }
    }

    #[test]
    fn no_qualifying_words_is_dropped_not_zero() {
        let posts = vec![
            post(&["a", "b", "c", "d"], &["rare"]),
            post(&["a", "a", "a", "a", "a", "b"], &["common"]),
        ];
        match chi_square_location(&posts, "rare", 5).unwrap() {
            ChiSquareOutcome::Dropped { location } => assert_eq!(location, "rare"),
            other => panic!("expected dropped, got {other:?}"),
        }
    }

    #[test]
    fn significant_words_order_and_clamp() {
        let report = ChiSquareReport {
            location: "l".to_string(),
            score: 3.0,
            qualifying_words: 2,
            contributions: BTreeMap::from([
                ("x".to_string(), 5.0),
                ("y".to_string(), 1.0),
            ]),
        };
        assert_eq!(significant_words(&report, 1), vec!["x"]);
        assert_eq!(significant_words(&report, 10), vec!["x", "y"]);
    }

    #[test]
    fn significant_words_tie_lexicographic() {
        let report = ChiSquareReport {
            location: "l".to_string(),
            score: 1.0,
            qualifying_words: 3,
            contributions: BTreeMap::from([
                ("m".to_string(), 2.0),
                ("b".to_string(), 2.0),
                ("z".to_string(), 1.0),
            ]),
        };
        assert_eq!(significant_words(&report, 3), vec!["b", "m", "z"]);
    }

    #[test]
    fn duplicating_corpus_scales_score_linearly() {
        let loc_tokens = vec!["a", "a", "a", "a", "a", "b", "b", "b"];
        let rest = vec!["b", "b", "b", "b", "b", "a", "a", "a"];
        let posts = vec![post(&loc_tokens, &["loc"]), post(&rest, &["other"])];
        let mut doubled = posts.clone();
        doubled.extend(posts.clone());
        let s1 = match chi_square_location(&posts, "loc", 5).unwrap() {
            ChiSquareOutcome::Scored(r) => r.score,
            _ => panic!(),
        };
        let s2 = match chi_square_location(&doubled, "loc", 5).unwrap() {
            ChiSquareOutcome::Scored(r) => r.score,
            _ => panic!(),
        };
        assert!((s2 - 2.0 * s1).abs() < 1e-9, "s1={s1} s2={s2}");
    }

    #[test]
    fn summary_counts_and_drop_isolation() {
        let posts = vec![
            post(&["a", "a", "a", "a", "a", "b"], &["loc"]),
            post(&["b", "b", "b", "b", "b", "a"], &["other"]),
            post(&["c", "d"], &["tiny"]),
        ];
        let cat = LocationCatalog::build(&posts, 1).unwrap();
        let (outcomes, summary) = chi_square_all(&posts, &cat, 5).unwrap();
        assert_eq!(summary.scored, 2);
        assert_eq!(summary.dropped, 1);
        // the dropped "tiny" location must not perturb other scores
        let direct = match chi_square_location(&posts, "loc", 5).unwrap() {
            ChiSquareOutcome::Scored(r) => r.score,
            _ => panic!(),
        };
        match &outcomes["loc"] {
            ChiSquareOutcome::Scored(a) => assert_eq!(a.score, direct),
            _ => panic!(),
        }
    }
}
