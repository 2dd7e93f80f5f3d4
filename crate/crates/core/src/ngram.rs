//! Count-based n-gram language model with additive smoothing. Uses the same
//! 4-token left-padded windows as the neural model so both are evaluated on
//! identical examples. Location type is deliberately ignored here; this is
//! the transparent baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::sampler::{TrainingExample, WINDOW};
use crate::vocab::ClassId;

#[derive(Debug, Error)]
pub enum NGramError {
    #[error("no training examples")]
    EmptyInput,
    #[error("smoothing constant must be >= 0")]
    BadSmoothing,
    #[error("unseen history with k = 0: distribution undefined")]
    UndefinedDistribution,
    #[error("target may not be the pad class")]
    PadTarget,
}

type History = [ClassId; WINDOW];

#[derive(Debug, Clone)]
pub struct NGramModel {
    counts: BTreeMap<History, BTreeMap<ClassId, u64>>,
    totals: BTreeMap<History, u64>,
    /// number of predictable classes (pad excluded)
    pub vocab_size: usize,
    pub pad_id: ClassId,
    pub smoothing: f64,
}

impl NGramModel {
    /// Counts every (context, target) pair. `num_classes` includes the pad
    /// class; pad itself is never a target.
    pub fn train(
        examples: &[TrainingExample],
        num_classes: usize,
        pad_id: ClassId,
        smoothing: f64,
    ) -> Result<Self, NGramError> {
        if examples.is_empty() {
            return Err(NGramError::EmptyInput);
        }
        if smoothing < 0.0 {
            return Err(NGramError::BadSmoothing);
        }
        let mut counts: BTreeMap<History, BTreeMap<ClassId, u64>> = BTreeMap::new();
        let mut totals: BTreeMap<History, u64> = BTreeMap::new();
        for e in examples {
            if e.target == pad_id {
                return Err(NGramError::PadTarget);
            }
            *counts
                .entry(e.context)
                .or_default()
                .entry(e.target)
                .or_insert(0) += 1;
            *totals.entry(e.context).or_insert(0) += 1;
        }
        Ok(NGramModel {
            counts,
            totals,
            vocab_size: num_classes - 1,
            pad_id,
            smoothing,
        })
    }

    /// Additive smoothing: (count + k) / (total + k * V). With k = 0 an
    /// unseen history has no defined distribution.
    pub fn prob(&self, history: &History, target: ClassId) -> Result<f64, NGramError> {
        if target == self.pad_id {
            return Err(NGramError::PadTarget);
        }
        let k = self.smoothing;
        let v = self.vocab_size as f64;
        match self.totals.get(history) {
            Some(&total) => {
                let c = self
                    .counts
                    .get(history)
                    .and_then(|m| m.get(&target))
                    .copied()
                    .unwrap_or(0) as f64;
                Ok((c + k) / (total as f64 + k * v))
            }
            None if k > 0.0 => Ok(1.0 / v),
            None => Err(NGramError::UndefinedDistribution),
        }
    }

    /// Classes by descending probability, ties by ascending id, pad excluded.
    pub fn predict_topk(&self, history: &History, k_best: usize) -> Vec<ClassId> {
        let k = self.smoothing;
        let v = self.vocab_size as f64;
        let (total, class_counts) = match self.totals.get(history) {
            Some(&t) => (t as f64, self.counts.get(history)),
            None => (0.0, None),
        };
        let denom = total + k * v;
        let mut scored: Vec<(f64, ClassId)> = (0..=self.vocab_size)
            .filter(|&c| c != self.pad_id)
            .map(|c| {
                let count = class_counts
                    .and_then(|m| m.get(&c))
                    .copied()
                    .unwrap_or(0) as f64;
                let p = if denom > 0.0 { (count + k) / denom } else { 0.0 };
                (p, c)
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        scored.into_iter().take(k_best).map(|(_, c)| c).collect()
    }

    /// Sum of log probabilities over every position, histories left-padded.
    /// A zero-probability position yields -infinity.
    pub fn sequence_logprob(&self, tokens: &[ClassId]) -> Result<f64, NGramError> {
        if tokens.is_empty() {
            return Err(NGramError::EmptyInput);
        }
        let mut logprob = 0.0;
        for t in 0..tokens.len() {
            let mut history = [self.pad_id; WINDOW];
            for pos in t.saturating_sub(WINDOW)..t {
                history[WINDOW - (t - pos)] = tokens[pos];
            }
            let p = self.prob(&history, tokens[t])?;
            if p == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            logprob += p.ln();
        }
        Ok(logprob)
    }

    /// Sorted text dump (history ids, target id, count), one row per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (h, targets) in &self.counts {
            for (t, c) in targets {
                let h_str: Vec<String> = h.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(out, "{} {} {}", h_str.join(" "), t, c);
            }
        }
        out
    }
}
