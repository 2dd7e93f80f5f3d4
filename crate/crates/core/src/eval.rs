//! Model scoring: top-k accuracy, variant comparison against the baseline,
//! and convergence-log merging for plotting.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::neural::EpochMetrics;
use crate::sampler::TrainingExample;
use crate::vocab::ClassId;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no examples to evaluate")]
    EmptyExamples,
    #[error("exactly one result must be labeled baseline, found {0}")]
    BaselineCount(usize),
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub variant: String,
    pub top1: f64,
    pub top5: f64,
    pub samples: usize,
    /// same accuracies with `<unk>` targets excluded
    pub top1_no_unk: Option<f64>,
    pub top5_no_unk: Option<f64>,
}

/// Fraction of examples whose target appears in the first k ranked classes.
/// `predict` returns classes in rank order for one example.
pub fn topk_accuracy<F>(predict: F, examples: &[TrainingExample], k: usize) -> Result<f64, EvalError>
where
    F: Fn(&TrainingExample) -> Vec<ClassId>,
{
    if examples.is_empty() {
        return Err(EvalError::EmptyExamples);
    }
    let hits = examples
        .iter()
        .filter(|e| predict(e).iter().take(k).any(|&c| c == e.target))
        .count();
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantDelta {
    pub variant: String,
    pub top1: f64,
    pub top5: f64,
    /// percentage points relative to the baseline
    pub delta_top1_points: f64,
    pub delta_top5_points: f64,
}

/// Per-variant absolute accuracies plus percentage-point deltas against the
/// one result labeled "baseline". Output order follows the input.
pub fn compare_variants(results: &[EvalResult]) -> Result<Vec<VariantDelta>, EvalError> {
    let baselines: Vec<&EvalResult> =
        results.iter().filter(|r| r.variant == "baseline").collect();
    if baselines.len() != 1 {
        return Err(EvalError::BaselineCount(baselines.len()));
    }
    let base = baselines[0];
    Ok(results
        .iter()
        .map(|r| VariantDelta {
            variant: r.variant.clone(),
            top1: r.top1,
            top5: r.top5,
            delta_top1_points: (r.top1 - base.top1) * 100.0,
            delta_top5_points: (r.top5 - base.top5) * 100.0,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LongRow {
    pub epoch: usize,
    pub variant: String,
    pub metric: String,
    pub value: f64,
}

/// Merges per-variant convergence logs into one long-format table
/// (epoch, variant, metric, value). Inconsistent epoch ranges produce an
/// outer join plus a warning flag.
pub fn convergence_log_merge(
    logs: &[(String, Vec<EpochMetrics>)],
) -> (Vec<LongRow>, bool) {
    let mut rows = Vec::new();
    let epoch_sets: Vec<BTreeSet<usize>> = logs
        .iter()
        .map(|(_, l)| l.iter().map(|m| m.epoch).collect())
        .collect();
    let inconsistent = epoch_sets.windows(2).any(|w| w[0] != w[1]);
    for (variant, log) in logs {
        for m in log {
            rows.push(LongRow {
                epoch: m.epoch,
                variant: variant.clone(),
                metric: "train_loss".to_string(),
                value: m.train_loss,
            });
            rows.push(LongRow {
                epoch: m.epoch,
                variant: variant.clone(),
                metric: "val_top1".to_string(),
                value: m.val_top1,
            });
            rows.push(LongRow {
                epoch: m.epoch,
                variant: variant.clone(),
                metric: "val_top5".to_string(),
                value: m.val_top5,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.epoch
            .cmp(&b.epoch)
            .then_with(|| a.variant.cmp(&b.variant))
            .then_with(|| a.metric.cmp(&b.metric))
    });
    (rows, inconsistent)
}
