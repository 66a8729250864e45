//! Prompt selection from unlabeled data.
//!
//! The pipeline runs four stages over a [`ScoreTensor`]:
//!
//! 1. per-prompt confidence: the sum over examples of the gap between the
//!    two most probable choices;
//! 2. filtering: exact two-cluster k-means on those confidences, keeping the
//!    upper cluster;
//! 3. ensembling the kept prompts into pseudo-labels;
//! 4. ranking kept prompts by agreement with the pseudo-labels ("pseudo
//!    accuracy") and picking the top one.

mod ensemble;
mod filter;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub(crate) use ensemble::top_two_gap;
pub use ensemble::{ensemble_predict, Ensemble, EnsembleStrategy};
pub use filter::{filter_prompts, two_means_threshold, FilterOutcome};

use crate::catalog::LabelId;
use crate::error::{Error, Result};
use crate::scoring::{predict, PredictionMatrix, ScoreTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: EnsembleStrategy,
    /// Run the confidence filter before ensembling.
    pub filter: bool,
    /// Also report pseudo accuracy of discarded prompts (they stay ineligible).
    pub score_all_prompts: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            strategy: EnsembleStrategy::LogprobMean,
            filter: true,
            score_all_prompts: false,
        }
    }
}

impl SelectionConfig {
    pub fn with_strategy(strategy: EnsembleStrategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub scores: BTreeMap<String, f64>,
    /// Sorted by prompt_id.
    pub kept: Vec<String>,
    pub discarded: Vec<String>,
    pub cluster_means: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub strategy: EnsembleStrategy,
    pub filtered: bool,
    pub confidence: ConfidenceReport,
    pub example_ids: Vec<String>,
    pub pseudo_labels: Vec<LabelId>,
    /// Kept prompts only.
    pub pseudo_acc: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discarded_pseudo_acc: Option<BTreeMap<String, f64>>,
    /// Kept prompts, best first.
    pub ranking: Vec<String>,
    pub selected: String,
}

impl SelectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

/// Confidence of every prompt in the tensor, in tensor order.
pub fn confidence_scores(tensor: &ScoreTensor) -> Result<Vec<f64>> {
    if tensor.num_choices() < 2 {
        return Err(Error::InvalidInput("confidence needs at least two choices".into()));
    }
    Ok((0..tensor.num_prompts())
        .map(|i| {
            (0..tensor.num_examples())
                .map(|k| {
                    let probs: Vec<f64> = tensor.cell(i, k).iter().map(|v| v.exp()).collect();
                    top_two_gap(&probs)
                })
                .sum()
        })
        .collect())
}

/// Fraction of positions where `row` equals `pseudo`.
pub fn agreement<T: PartialEq>(row: &[T], pseudo: &[T]) -> Result<f64> {
    if row.len() != pseudo.len() {
        return Err(Error::InvalidInput(format!(
            "prediction length {} does not match pseudo-label length {}",
            row.len(),
            pseudo.len()
        )));
    }
    if row.is_empty() {
        return Err(Error::InvalidInput("cannot score agreement over zero examples".into()));
    }
    let hits = row.iter().zip(pseudo).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / row.len() as f64)
}

/// Pseudo accuracy of the given prompt rows against choice-index pseudo-labels.
pub fn pseudo_accuracy(
    preds: &PredictionMatrix,
    rows: &[usize],
    pseudo_labels: &[usize],
) -> Result<BTreeMap<String, f64>> {
    rows.iter()
        .map(|&i| {
            if i >= preds.num_prompts() {
                return Err(Error::InvalidInput(format!("prompt row {i} out of range")));
            }
            Ok((preds.prompt_ids()[i].clone(), agreement(preds.row(i), pseudo_labels)?))
        })
        .collect()
}

/// Orders candidates by pseudo accuracy, then confidence (both descending),
/// then prompt_id.
pub fn rank_candidates(
    candidates: &[String],
    pseudo_acc: &BTreeMap<String, f64>,
    confidence: &BTreeMap<String, f64>,
) -> Vec<String> {
    let key = |id: &String, map: &BTreeMap<String, f64>| map.get(id).copied().unwrap_or(f64::NEG_INFINITY);
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|a, b| {
        key(b, pseudo_acc)
            .partial_cmp(&key(a, pseudo_acc))
            .unwrap_or(Ordering::Equal)
            .then_with(|| {
                key(b, confidence)
                    .partial_cmp(&key(a, confidence))
                    .unwrap_or(Ordering::Equal)
            })
            .then_with(|| a.cmp(b))
    });
    ranked
}

/// Runs confidence → filter → ensemble → pseudo accuracy → ranking.
pub fn select(tensor: &ScoreTensor, config: &SelectionConfig) -> Result<SelectionReport> {
    let confidences = confidence_scores(tensor)?;
    let outcome = if config.filter {
        filter_prompts(&confidences)
    } else {
        let all: Vec<usize> = (0..tensor.num_prompts()).collect();
        let mean = confidences.iter().sum::<f64>() / confidences.len() as f64;
        FilterOutcome {
            kept: all,
            discarded: Vec::new(),
            cluster_means: [mean, mean],
            threshold: None,
        }
    };
    if outcome.kept.is_empty() {
        return Err(Error::Invariant("filter kept no prompts".into()));
    }

    let ensemble = ensemble_predict(tensor, &outcome.kept, config.strategy)?;
    let preds = predict(tensor);
    let pseudo_acc = pseudo_accuracy(&preds, &outcome.kept, &ensemble.labels)?;
    let discarded_pseudo_acc = if config.score_all_prompts {
        Some(pseudo_accuracy(&preds, &outcome.discarded, &ensemble.labels)?)
    } else {
        None
    };

    let ids = tensor.prompt_ids();
    let scores: BTreeMap<String, f64> = ids.iter().cloned().zip(confidences.iter().copied()).collect();
    let sorted_ids = |rows: &[usize]| {
        let mut v: Vec<String> = rows.iter().map(|&i| ids[i].clone()).collect();
        v.sort();
        v
    };
    let kept = sorted_ids(&outcome.kept);
    let ranking = rank_candidates(&kept, &pseudo_acc, &scores);
    let selected = ranking
        .first()
        .cloned()
        .ok_or_else(|| Error::Invariant("no eligible prompt".into()))?;

    Ok(SelectionReport {
        strategy: config.strategy,
        filtered: config.filter,
        confidence: ConfidenceReport {
            kept,
            discarded: sorted_ids(&outcome.discarded),
            cluster_means: outcome.cluster_means,
            scores,
        },
        example_ids: tensor.example_ids().to_vec(),
        pseudo_labels: ensemble.labels.iter().map(|&j| tensor.choices()[j].clone()).collect(),
        pseudo_acc,
        discarded_pseudo_acc,
        ranking,
        selected,
    })
}
