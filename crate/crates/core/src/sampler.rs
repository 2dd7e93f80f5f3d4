//! Fixed-window training examples and class rebalancing.
//!
//! Rebalancing rule: majority classes are cut down to ceil(mu + sigma) over
//! the per-class supports, minority classes may be pulled up toward the mean
//! but never duplicated past 3x their original support.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Post;
use crate::divergence::LocationCatalog;
use crate::vocab::{ClassId, Vocabulary};

pub const WINDOW: usize = 4;
pub const OVERSAMPLE_CAP: u64 = 3;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("all class counts are zero")]
    EmptyCounts,
    #[error("plan does not cover class {0}")]
    PlanMismatch(ClassId),
    #[error("need at least 2 examples to split")]
    TooFewExamples,
    #[error("holdout fraction must be in (0, 1)")]
    BadFraction,
}

/// One supervised example: 4 previous class ids (left-padded), the post's
/// multi-hot place vector, and the next-word target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub context: [ClassId; WINDOW],
    pub place_vector: Vec<f64>,
    pub target: ClassId,
}

/// Per-class resample targets plus the statistics they were derived from.
#[derive(Debug, Clone, Serialize)]
pub struct ResamplePlan {
    pub mu: f64,
    pub sigma: f64,
    /// ceil(mu + sigma)
    pub undersample_bound: u64,
    pub oversample_to_mean: bool,
    pub targets: BTreeMap<ClassId, PlanEntry>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlanEntry {
    pub original: u64,
    pub target: u64,
}

/// One example per position t in [1, len-1]: the 4 tokens before t,
/// left-padded with the pad class, predict the token at t.
pub fn window_examples(
    post: &Post,
    vocab: &Vocabulary,
    catalog: &LocationCatalog,
) -> Vec<TrainingExample> {
    let ids: Vec<ClassId> = post.tokens.iter().map(|t| vocab.encode(t)).collect();
    let place_vector = catalog.multi_hot(post);
    let pad = vocab.pad_id();
    let mut examples = Vec::with_capacity(ids.len().saturating_sub(1));
    for t in 1..ids.len() {
        let mut context = [pad; WINDOW];
        // right-align the available history
        for pos in t.saturating_sub(WINDOW)..t {
            context[WINDOW - (t - pos)] = ids[pos];
        }
        examples.push(TrainingExample {
            context,
            place_vector: place_vector.clone(),
            target: ids[t],
        });
    }
    examples
}

/// Computes mu and the population sigma over the supports of classes with
/// count > 0, then derives per-class targets.
pub fn compute_plan(
    class_counts: &BTreeMap<ClassId, u64>,
    oversample_to_mean: bool,
) -> Result<ResamplePlan, SamplerError> {
    let supports: Vec<u64> = class_counts.values().copied().filter(|&c| c > 0).collect();
    if supports.is_empty() {
        return Err(SamplerError::EmptyCounts);
    }
    let n = supports.len() as f64;
    let mu = supports.iter().sum::<u64>() as f64 / n;
    let var = supports
        .iter()
        .map(|&c| {
            let d = c as f64 - mu;
            d * d
        })
        .sum::<f64>()
        / n;
    let sigma = var.sqrt();
    let undersample_bound = (mu + sigma).ceil() as u64;
    let mut targets = BTreeMap::new();
    for (&class, &original) in class_counts {
        if original == 0 {
            continue;
        }
        let target = if original > undersample_bound {
            undersample_bound
        } else if oversample_to_mean && (original as f64) < mu {
            (mu.ceil() as u64).min(OVERSAMPLE_CAP * original)
        } else {
            original
        };
        targets.insert(class, PlanEntry { original, target });
    }
    Ok(ResamplePlan {
        mu,
        sigma,
        undersample_bound,
        oversample_to_mean,
        targets,
    })
}

pub fn class_counts(examples: &[TrainingExample]) -> BTreeMap<ClassId, u64> {
    let mut counts = BTreeMap::new();
    for e in examples {
        *counts.entry(e.target).or_insert(0) += 1;
    }
    counts
}

/// Redraws the example set to the plan's per-class targets: undersampling
/// without replacement, oversampling by keeping originals and duplicating
/// with replacement. Deterministic for a fixed seed; output is shuffled.
pub fn resample(
    examples: &[TrainingExample],
    plan: &ResamplePlan,
    seed: u64,
) -> Result<Vec<TrainingExample>, SamplerError> {
    let mut by_class: BTreeMap<ClassId, Vec<&TrainingExample>> = BTreeMap::new();
    for e in examples {
        by_class.entry(e.target).or_default().push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<TrainingExample> = Vec::new();
    for (class, members) in &by_class {
        let entry = plan
            .targets
            .get(class)
            .ok_or(SamplerError::PlanMismatch(*class))?;
        if entry.original != members.len() as u64 {
            return Err(SamplerError::PlanMismatch(*class));
        }
        let target = entry.target as usize;
        if target <= members.len() {
            let mut idx: Vec<usize> = (0..members.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(target);
            idx.sort_unstable();
            out.extend(idx.into_iter().map(|i| members[i].clone()));
        } else {
            out.extend(members.iter().map(|m| (*m).clone()));
            for _ in 0..(target - members.len()) {
                let i = rng.gen_range(0..members.len());
                out.push(members[i].clone());
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Deterministic shuffle-and-cut split. Run this before resampling so
/// duplicated examples never straddle the boundary.
pub fn split_dataset(
    examples: &[TrainingExample],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<TrainingExample>, Vec<TrainingExample>), SamplerError> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(SamplerError::BadFraction);
    }
    if examples.len() < 2 {
        return Err(SamplerError::TooFewExamples);
    }
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut holdout = ((examples.len() as f64) * holdout_fraction).round() as usize;
    holdout = holdout.clamp(1, examples.len() - 1);
    let (val_idx, train_idx) = idx.split_at(holdout);
    let train = train_idx.iter().map(|&i| examples[i].clone()).collect();
    let validation = val_idx.iter().map(|&i| examples[i].clone()).collect();
    Ok((train, validation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn toy_vocab() -> Vocabulary {
        let posts = vec![Post {
            id: "v".to_string(),
            tokens: ["a", "b", "c", "d", "e", "f"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            place_types: BTreeSet::from(["x".to_string()]),
        }];
        Vocabulary::build(&posts, 6).unwrap()
    }

    fn toy_catalog() -> LocationCatalog {
        let posts = vec![Post {
            id: "c".to_string(),
            tokens: vec!["a".to_string(), "b".to_string()],
            place_types: BTreeSet::from(["x".to_string(), "y".to_string()]),
        }];
        LocationCatalog::build(&posts, 1).unwrap()
    }

    fn post(tokens: &[&str]) -> Post {
        Post {
            id: "p".to_string(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            place_types: BTreeSet::from(["x".to_string()]),
        }
    }

    fn example(target: ClassId) -> TrainingExample {
        TrainingExample {
            context: [0, 0, 0, 0],
            place_vector: vec![1.0],
            target,
        }
    }

    #[test]
    fn minimal_post_one_example() {
        let v = toy_vocab();
        let cat = toy_catalog();
        let ex = window_examples(&post(&["a", "b"]), &v, &cat);
        assert_eq!(ex.len(), 1);
        let pad = v.pad_id();
        assert_eq!(ex[0].context, [pad, pad, pad, v.encode("a")]);
        assert_eq!(ex[0].target, v.encode("b"));
    }

    #[test]
    fn example_count_is_len_minus_one() {
        let v = toy_vocab();
        let cat = toy_catalog();
        let ex = window_examples(&post(&["a", "b", "c", "d", "e", "f"]), &v, &cat);
        assert_eq!(ex.len(), 5);
    }

    #[test]
    fn window_at_t5_is_bcde() {
        let v = toy_vocab();
        let cat = toy_catalog();
        let ex = window_examples(&post(&["a", "b", "c", "d", "e", "f"]), &v, &cat);
        let last = &ex[4];
        assert_eq!(
            last.context,
            [v.encode("b"), v.encode("c"), v.encode("d"), v.encode("e")]
        );
        assert_eq!(last.target, v.encode("f"));
    }

    #[test]
    fn no_target_is_pad() {
        let v = toy_vocab();
        let cat = toy_catalog();
        for p in [post(&["a", "b"]), post(&["a", "b", "c", "d", "e", "f"])] {
            for e in window_examples(&p, &v, &cat) {
                assert_ne!(e.target, v.pad_id());
            }
        }
    }

    #[test]
    fn plan_hand_arithmetic() {
        // counts {a:10, b:2, c:3}: mu = 5, sigma = sqrt(38/3), bound = 9
        let counts = BTreeMap::from([(0, 10u64), (1, 2), (2, 3)]);
        let plan = compute_plan(&counts, false).unwrap();
        assert!((plan.mu - 5.0).abs() < 1e-12);
        assert!((plan.sigma - (38.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(plan.undersample_bound, 9);
        assert_eq!(plan.targets[&0].target, 9);
        assert_eq!(plan.targets[&1].target, 2);
        assert_eq!(plan.targets[&2].target, 3);
    }

    #[test]
    fn plan_with_oversampling_pulls_toward_mean() {
        let counts = BTreeMap::from([(0, 10u64), (1, 2), (2, 3)]);
        let plan = compute_plan(&counts, true).unwrap();
        // mu = 5: b raised to min(5, 6) = 5, c to min(5, 9) = 5
        assert_eq!(plan.targets[&1].target, 5);
        assert_eq!(plan.targets[&2].target, 5);
        assert_eq!(plan.targets[&0].target, 9);
    }

    #[test]
    fn uniform_counts_unchanged() {
        let counts = BTreeMap::from([(0, 4u64), (1, 4)]);
        let plan = compute_plan(&counts, true).unwrap();
        assert_eq!(plan.sigma, 0.0);
        assert_eq!(plan.targets[&0].target, 4);
        assert_eq!(plan.targets[&1].target, 4);
    }

    #[test]
    fn single_class_degenerate() {
        let counts = BTreeMap::from([(7, 7u64)]);
        let plan = compute_plan(&counts, true).unwrap();
        assert!((plan.mu - 7.0).abs() < 1e-12);
        assert_eq!(plan.sigma, 0.0);
        assert_eq!(plan.targets[&7].target, 7);
    }

    #[test]
    fn all_zero_counts_error() {
        let counts = BTreeMap::from([(0, 0u64)]);
        assert!(compute_plan(&counts, true).is_err());
    }

    #[test]
    fn oversample_capped_at_three_times() {
        // minority with 2 originals asked for 10 -> cap at 6
        let examples: Vec<TrainingExample> =
            (0..2).map(|_| example(1)).chain((0..40).map(|_| example(0))).collect();
        let counts = class_counts(&examples);
        let mut plan = compute_plan(&counts, true).unwrap();
        plan.targets.get_mut(&1).unwrap().target = 10.min(OVERSAMPLE_CAP * 2);
        let out = resample(&examples, &plan, 7).unwrap();
        let n1 = out.iter().filter(|e| e.target == 1).count();
        assert_eq!(n1, 6);
    }

    #[test]
    fn identity_plan_preserves_multiset() {
        let examples: Vec<TrainingExample> =
            (0..5).map(|_| example(0)).chain((0..3).map(|_| example(1))).collect();
        let counts = class_counts(&examples);
        let plan = compute_plan(&counts, false).unwrap();
        let out = resample(&examples, &plan, 1).unwrap();
        assert_eq!(out.len(), examples.len());
        let c = class_counts(&out);
        assert_eq!(c, counts);
    }

    #[test]
    fn resample_deterministic() {
        let examples: Vec<TrainingExample> =
            (0..30).map(|i| example(i % 3)).collect();
        let counts = class_counts(&examples);
        let plan = compute_plan(&counts, true).unwrap();
        let a = resample(&examples, &plan, 42).unwrap();
        let b = resample(&examples, &plan, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plan_mismatch_errors() {
        let examples = vec![example(0)];
        let counts = BTreeMap::from([(1, 1u64)]);
        let plan = compute_plan(&counts, false).unwrap();
        assert!(resample(&examples, &plan, 0).is_err());
    }

    #[test]
    fn split_90_10() {
        let examples: Vec<TrainingExample> = (0..100).map(|i| example(i % 5)).collect();
        let (train, val) = split_dataset(&examples, 0.10, 3).unwrap();
        assert_eq!(train.len(), 90);
        assert_eq!(val.len(), 10);
    }

    #[test]
    fn split_deterministic_and_exhaustive() {
        let examples: Vec<TrainingExample> = (0..37).map(|i| example(i % 4)).collect();
        let (t1, v1) = split_dataset(&examples, 0.10, 9).unwrap();
        let (t2, v2) = split_dataset(&examples, 0.10, 9).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        let mut union = class_counts(&t1);
        for (k, n) in class_counts(&v1) {
            *union.entry(k).or_insert(0) += n;
        }
        assert_eq!(union, class_counts(&examples));
        assert_eq!(t1.len() + v1.len(), examples.len());
    }

    #[test]
    fn split_too_few_errors() {
        assert!(split_dataset(&[example(0)], 0.1, 0).is_err());
    }
}
