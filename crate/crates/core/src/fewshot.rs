//! Pseudo-labeled data in the few-shot regime.
//!
//! Pseudo-labels from the prompt ensemble stand in for a labeled validation
//! set: they pick checkpoints produced by an external trainer and prompts,
//! leaving every gold example free for training. The harness never trains
//! anything; it consumes prediction files.
//!
//! Per-example confidence is the gap between the two best ensemble scores.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::LabelId;
use crate::error::{Error, Result};
use crate::scoring::{predict, PredictionMatrix, ScoreTensor};
use crate::selection::{
    agreement, confidence_scores, ensemble_predict, filter_prompts, rank_candidates, select, SelectionConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub example_id: String,
    pub label: LabelId,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledSet {
    /// In the tensor's example order.
    pub entries: Vec<PseudoLabel>,
    pub provenance: String,
}

impl PseudoLabeledSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn example_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.example_id.as_str()).collect()
    }

    /// One `{"example_id", "label", "gap"}` object per line.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("pseudo label serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str, provenance: &str) -> Result<Self> {
        let mut entries: Vec<PseudoLabel> = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: PseudoLabel =
                serde_json::from_str(line).map_err(|e| Error::parse(format!("pseudo-label line {}", idx + 1), e))?;
            if !seen.insert(entry.example_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate example_id `{}` in pseudo-labeled set",
                    entry.example_id
                )));
            }
            entries.push(entry);
        }
        Ok(Self {
            entries,
            provenance: provenance.to_string(),
        })
    }

    /// The `k` entries with the largest gap; earlier examples win ties.
    /// Entries keep their original order.
    pub fn top_k(&self, k: usize) -> Result<PseudoLabeledSet> {
        let n = self.entries.len();
        if k == 0 || k > n {
            return Err(Error::InvalidInput(format!("k = {k} is outside 1..={n}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.entries[b].gap.total_cmp(&self.entries[a].gap).then(a.cmp(&b)));
        let mut chosen = order[..k].to_vec();
        chosen.sort_unstable();
        Ok(PseudoLabeledSet {
            entries: chosen.into_iter().map(|i| self.entries[i].clone()).collect(),
            provenance: format!("{}; top-{k} by gap", self.provenance),
        })
    }
}

fn provenance(config: &SelectionConfig) -> String {
    format!(
        "{} ensemble{}",
        config.strategy,
        if config.filter { " over filtered prompts" } else { "" }
    )
}

/// Pseudo-labels every example with the (optionally filtered) prompt ensemble.
pub fn pseudo_label_all(tensor: &ScoreTensor, config: &SelectionConfig) -> Result<PseudoLabeledSet> {
    let members = if config.filter {
        filter_prompts(&confidence_scores(tensor)?).kept
    } else {
        (0..tensor.num_prompts()).collect()
    };
    let ensemble = ensemble_predict(tensor, &members, config.strategy)?;
    Ok(PseudoLabeledSet {
        entries: tensor
            .example_ids()
            .iter()
            .enumerate()
            .map(|(k, id)| PseudoLabel {
                example_id: id.clone(),
                label: tensor.choices()[ensemble.labels[k]].clone(),
                gap: ensemble.gap(k),
            })
            .collect(),
        provenance: provenance(config),
    })
}

/// Pseudo-validation set: all examples, or the `size` most confident ones.
pub fn build_pseudo_val(
    tensor: &ScoreTensor,
    config: &SelectionConfig,
    size: Option<usize>,
) -> Result<PseudoLabeledSet> {
    let n = tensor.num_examples();
    if let Some(s) = size {
        if s > n {
            return Err(Error::InvalidInput(format!(
                "pseudo-val size {s} exceeds the {n} available examples"
            )));
        }
    }
    let all = pseudo_label_all(tensor, config)?;
    match size {
        Some(s) if s < n => all.top_k(s),
        _ => Ok(all),
    }
}

/// The `k` most confident pseudo-labeled examples, for an external trainer.
pub fn top_confidence_pseudo_train(
    tensor: &ScoreTensor,
    config: &SelectionConfig,
    k: usize,
) -> Result<PseudoLabeledSet> {
    let n = tensor.num_examples();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k = {k} is outside 1..={n}")));
    }
    pseudo_label_all(tensor, config)?.top_k(k)
}

/// Predictions of one training checkpoint, one row per served prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointPredictions {
    pub checkpoint_id: String,
    pub example_ids: Vec<String>,
    pub rows: Vec<(String, Vec<LabelId>)>,
}

impl CheckpointPredictions {
    /// Builds the per-prompt rows of a prediction matrix.
    pub fn from_matrix(checkpoint_id: &str, preds: &PredictionMatrix) -> Self {
        Self {
            checkpoint_id: checkpoint_id.to_string(),
            example_ids: preds.example_ids().to_vec(),
            rows: (0..preds.num_prompts())
                .map(|i| {
                    let labels = (0..preds.num_examples()).map(|k| preds.label(i, k).clone()).collect();
                    (preds.prompt_ids()[i].clone(), labels)
                })
                .collect(),
        }
    }
}

#[derive(Deserialize)]
struct PredictionLine {
    checkpoint_id: String,
    prompt_id: String,
    example_id: String,
    pred: LabelId,
}

/// Reads `{"checkpoint_id", "prompt_id", "example_id", "pred"}` lines.
/// Checkpoints keep their first-appearance order.
pub fn parse_checkpoint_predictions(text: &str) -> Result<Vec<CheckpointPredictions>> {
    let mut order: Vec<String> = Vec::new();
    // checkpoint -> (example order, prompt -> example -> prediction)
    type Grouped = HashMap<String, (Vec<String>, BTreeMap<String, HashMap<String, LabelId>>)>;
    let mut grouped: Grouped = HashMap::new();
    let mut prompt_order: HashMap<String, Vec<String>> = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine =
            serde_json::from_str(line).map_err(|e| Error::parse(format!("predictions line {}", idx + 1), e))?;
        if !grouped.contains_key(&p.checkpoint_id) {
            order.push(p.checkpoint_id.clone());
        }
        let (examples, by_prompt) = grouped.entry(p.checkpoint_id.clone()).or_default();
        if !examples.contains(&p.example_id) {
            examples.push(p.example_id.clone());
        }
        let prompts = prompt_order.entry(p.checkpoint_id.clone()).or_default();
        if !prompts.contains(&p.prompt_id) {
            prompts.push(p.prompt_id.clone());
        }
        let row = by_prompt.entry(p.prompt_id.clone()).or_default();
        if row.insert(p.example_id.clone(), p.pred).is_some() {
            return Err(Error::Validation(format!(
                "duplicate prediction for ({}, {}, {})",
                p.checkpoint_id, p.prompt_id, p.example_id
            )));
        }
    }

    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let (examples, mut by_prompt) = grouped.remove(&id).expect("grouped checkpoint");
        let mut rows = Vec::new();
        for prompt in &prompt_order[&id] {
            let mut preds = by_prompt.remove(prompt).expect("grouped prompt");
            let labels = examples
                .iter()
                .map(|ex| {
                    preds.remove(ex).ok_or_else(|| {
                        Error::Validation(format!(
                            "checkpoint `{id}` prompt `{prompt}` has no prediction for `{ex}`"
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push((prompt.clone(), labels));
        }
        out.push(CheckpointPredictions {
            checkpoint_id: id,
            example_ids: examples,
            rows,
        });
    }
    Ok(out)
}

/// Mean over the checkpoint's prompts of agreement with the pseudo labels.
pub fn checkpoint_agreement(candidate: &CheckpointPredictions, pseudo_val: &PseudoLabeledSet) -> Result<f64> {
    if candidate.rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "checkpoint `{}` has no predictions",
            candidate.checkpoint_id
        )));
    }
    let position: HashMap<&str, usize> = candidate
        .example_ids
        .iter()
        .enumerate()
        .map(|(k, id)| (id.as_str(), k))
        .collect();
    let cols = pseudo_val
        .entries
        .iter()
        .map(|e| {
            position.get(e.example_id.as_str()).copied().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "coverage mismatch: checkpoint `{}` has no prediction for `{}`",
                    candidate.checkpoint_id, e.example_id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<&LabelId> = pseudo_val.entries.iter().map(|e| &e.label).collect();
    let mut total = 0.0;
    for (_, row) in &candidate.rows {
        let picked: Vec<&LabelId> = cols.iter().map(|&k| &row[k]).collect();
        total += agreement(&picked, &targets)?;
    }
    Ok(total / candidate.rows.len() as f64)
}

/// Agreement of every candidate, in the given order.
pub fn score_checkpoints(
    candidates: &[CheckpointPredictions],
    pseudo_val: &PseudoLabeledSet,
) -> Result<Vec<(String, f64)>> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no checkpoints to choose from".into()));
    }
    let first = &candidates[0].example_ids;
    if let Some(odd) = candidates.iter().find(|c| &c.example_ids != first) {
        return Err(Error::InvalidInput(format!(
            "coverage mismatch: checkpoint `{}` covers a different example list than `{}`",
            odd.checkpoint_id, candidates[0].checkpoint_id
        )));
    }
    candidates
        .iter()
        .map(|c| Ok((c.checkpoint_id.clone(), checkpoint_agreement(c, pseudo_val)?)))
        .collect()
}

/// Checkpoint with the highest agreement; the earliest wins ties.
pub fn select_checkpoint(candidates: &[CheckpointPredictions], pseudo_val: &PseudoLabeledSet) -> Result<String> {
    let scores = score_checkpoints(candidates, pseudo_val)?;
    let mut best = 0;
    for (idx, (_, s)) in scores.iter().enumerate() {
        if *s > scores[best].1 {
            best = idx;
        }
    }
    Ok(scores[best].0.clone())
}

/// Ways of splitting a small gold set and pseudo-labeled data between
/// training and validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UsageStrategy {
    /// Gold halves for training and validation.
    #[serde(rename = "16+16")]
    SplitGold,
    /// Top-confidence pseudo-labels train, all gold validates.
    #[serde(rename = "32-pseudo-train")]
    PseudoTrain,
    /// All gold trains, top-confidence pseudo-labels validate.
    #[serde(rename = "32-pseudo-val")]
    PseudoVal,
    /// All gold trains, every pseudo-labeled example validates.
    #[serde(rename = "more-pseudo-val")]
    MorePseudoVal,
}

impl fmt::Display for UsageStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UsageStrategy::SplitGold => "16+16",
            UsageStrategy::PseudoTrain => "32-pseudo-train",
            UsageStrategy::PseudoVal => "32-pseudo-val",
            UsageStrategy::MorePseudoVal => "more-pseudo-val",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Gold,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRow {
    pub strategy: UsageStrategy,
    pub train_source: LabelSource,
    pub train_ids: Vec<String>,
    /// Accuracy of the training labels against gold (1 for gold sets).
    pub train_label_accuracy: f64,
    pub val_source: LabelSource,
    pub val_size: usize,
    pub val_label_accuracy: f64,
    pub selected: String,
    /// True accuracy of the selected prompt on the unlabeled pool.
    pub selected_accuracy: f64,
    pub agrees_with_gold_val: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub labeled_size: usize,
    pub pool_size: usize,
    pub pseudo_k: usize,
    /// Prompt picked by the gold validation half.
    pub gold_val_selection: String,
    /// Best prompt by true pool accuracy.
    pub oracle_selection: String,
    pub rows: Vec<UsageRow>,
}

/// Compares the four usage strategies on quantities computable without
/// training: label quality of each set and the prompt each validation set
/// would select.
///
/// `labeled` indexes the gold set within the tensor's examples (its first
/// half trains, its second half validates under `16+16`); every other
/// example forms the unlabeled pool. Gold-validated selection considers all
/// prompts; pseudo-validated selection follows `config` and only considers
/// prompts kept by the filter.
pub fn evaluate_usage_strategies(
    tensor: &ScoreTensor,
    gold: &[Option<LabelId>],
    labeled: &[usize],
    config: &SelectionConfig,
    pseudo_k: usize,
) -> Result<UsageReport> {
    let n = tensor.num_examples();
    if gold.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} gold entries for {n} examples",
            gold.len()
        )));
    }
    let missing: Vec<String> = (0..n)
        .filter(|&k| gold[k].is_none())
        .map(|k| tensor.example_ids()[k].clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGold(missing));
    }
    let gold: Vec<usize> = gold
        .iter()
        .map(|g| tensor_choice(tensor, g.as_ref().expect("checked above")))
        .collect::<Result<_>>()?;
    let m = labeled.len();
    if m < 2 || !m.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "labeled set must have an even size of at least 2, got {m}"
        )));
    }
    let labeled_set: HashSet<usize> = labeled.iter().copied().collect();
    if labeled_set.len() != m || labeled.iter().any(|&k| k >= n) {
        return Err(Error::InvalidInput(
            "labeled indices must be distinct and in range".into(),
        ));
    }
    let pool: Vec<usize> = (0..n).filter(|k| !labeled_set.contains(k)).collect();
    if pseudo_k == 0 || pseudo_k > pool.len() {
        return Err(Error::InvalidInput(format!(
            "pseudo_k = {pseudo_k} is outside 1..={}",
            pool.len()
        )));
    }

    let preds = predict(tensor);
    let pool_tensor = tensor.select_examples(&pool);
    let pool_gold: Vec<usize> = pool.iter().map(|&k| gold[k]).collect();
    let conf: BTreeMap<String, f64> = tensor
        .prompt_ids()
        .iter()
        .cloned()
        .zip(confidence_scores(&pool_tensor)?)
        .collect();
    let pool_acc: BTreeMap<String, f64> = (0..preds.num_prompts())
        .map(|i| {
            let row: Vec<usize> = pool.iter().map(|&k| preds.get(i, k)).collect();
            Ok((preds.prompt_ids()[i].clone(), agreement(&row, &pool_gold)?))
        })
        .collect::<Result<_>>()?;
    let all_prompts: Vec<String> = tensor.prompt_ids().to_vec();
    let zps = select(&pool_tensor, config)?;
    let eligible = zps.ranking.clone();

    let pick = |cols: &[usize], targets: &[usize], candidates: &[String]| -> Result<String> {
        let acc: BTreeMap<String, f64> = candidates
            .iter()
            .map(|id| {
                let i = tensor.prompt_index(id).expect("candidate from tensor");
                let row: Vec<usize> = cols.iter().map(|&k| preds.get(i, k)).collect();
                Ok((id.clone(), agreement(&row, targets)?))
            })
            .collect::<Result<_>>()?;
        Ok(rank_candidates(candidates, &acc, &conf)[0].clone())
    };
    let gold_of = |cols: &[usize]| cols.iter().map(|&k| gold[k]).collect::<Vec<_>>();
    let ids_of = |cols: &[usize]| {
        cols.iter()
            .map(|&k| tensor.example_ids()[k].clone())
            .collect::<Vec<_>>()
    };

    let all_pseudo = pseudo_label_all(&pool_tensor, config)?;
    let top = all_pseudo.top_k(pseudo_k)?;
    let top_cols: Vec<usize> = top
        .entries
        .iter()
        .map(|e| {
            pool[pool_tensor
                .example_ids()
                .iter()
                .position(|id| id == &e.example_id)
                .expect("pool example")]
        })
        .collect();
    let top_labels: Vec<usize> = top
        .entries
        .iter()
        .map(|e| tensor_choice(tensor, &e.label))
        .collect::<Result<_>>()?;
    let top_quality = agreement(&top_labels, &gold_of(&top_cols))?;
    let all_labels: Vec<usize> = all_pseudo
        .entries
        .iter()
        .map(|e| tensor_choice(tensor, &e.label))
        .collect::<Result<_>>()?;
    let all_quality = agreement(&all_labels, &pool_gold)?;

    let (train_half, val_half) = labeled.split_at(m / 2);
    let gold_val_selection = pick(val_half, &gold_of(val_half), &all_prompts)?;
    let oracle_selection = rank_candidates(&all_prompts, &pool_acc, &conf)[0].clone();

    let row = |strategy,
               train_source,
               train_ids,
               train_label_accuracy,
               val_source,
               val_size,
               val_label_accuracy,
               selected: String| UsageRow {
        strategy,
        train_source,
        train_ids,
        train_label_accuracy,
        val_source,
        val_size,
        val_label_accuracy,
        selected_accuracy: pool_acc[&selected],
        agrees_with_gold_val: selected == gold_val_selection,
        selected,
    };
    let rows = vec![
        row(
            UsageStrategy::SplitGold,
            LabelSource::Gold,
            ids_of(train_half),
            1.0,
            LabelSource::Gold,
            val_half.len(),
            1.0,
            gold_val_selection.clone(),
        ),
        row(
            UsageStrategy::PseudoTrain,
            LabelSource::Pseudo,
            ids_of(&top_cols),
            top_quality,
            LabelSource::Gold,
            m,
            1.0,
            pick(labeled, &gold_of(labeled), &all_prompts)?,
        ),
        row(
            UsageStrategy::PseudoVal,
            LabelSource::Gold,
            ids_of(labeled),
            1.0,
            LabelSource::Pseudo,
            pseudo_k,
            top_quality,
            pick(&top_cols, &top_labels, &eligible)?,
        ),
        row(
            UsageStrategy::MorePseudoVal,
            LabelSource::Gold,
            ids_of(labeled),
            1.0,
            LabelSource::Pseudo,
            pool.len(),
            all_quality,
            zps.selected.clone(),
        ),
    ];
    Ok(UsageReport {
        labeled_size: m,
        pool_size: pool.len(),
        pseudo_k,
        gold_val_selection,
        oracle_selection,
        rows,
    })
}

fn tensor_choice(tensor: &ScoreTensor, label: &LabelId) -> Result<usize> {
    tensor
        .choices()
        .iter()
        .position(|c| c == label)
        .ok_or_else(|| Error::UnknownLabel(label.0.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(gaps: &[f64]) -> PseudoLabeledSet {
        PseudoLabeledSet {
            entries: gaps
                .iter()
                .enumerate()
                .map(|(k, &gap)| PseudoLabel {
                    example_id: format!("x{}", k + 1),
                    label: "a".into(),
                    gap,
                })
                .collect(),
            provenance: "test".into(),
        }
    }

    fn tensor(p: usize, n: usize, values: Vec<f64>) -> ScoreTensor {
        ScoreTensor::new(
            (0..p).map(|i| format!("p{i}")).collect(),
            (0..n).map(|k| format!("x{k}")).collect(),
            vec!["a".into(), "b".into()],
            values,
        )
        .unwrap()
    }

    fn checkpoint(id: &str, labels: &[&str]) -> CheckpointPredictions {
        CheckpointPredictions {
            checkpoint_id: id.into(),
            example_ids: (0..labels.len()).map(|k| format!("x{k}")).collect(),
            rows: vec![("p".into(), labels.iter().map(|&l| LabelId::from(l)).collect())],
        }
    }

    fn pseudo(labels: &[&str]) -> PseudoLabeledSet {
        PseudoLabeledSet {
            entries: labels
                .iter()
                .enumerate()
                .map(|(k, &l)| PseudoLabel {
                    example_id: format!("x{k}"),
                    label: l.into(),
                    gap: 0.5,
                })
                .collect(),
            provenance: "test".into(),
        }
    }

    #[test]
    fn top_k_picks_largest_gaps() {
        let picked = set(&[0.9, 0.1, 0.5]).top_k(2).unwrap();
        assert_eq!(picked.example_ids(), vec!["x1", "x3"]);
        assert_eq!(set(&[0.9, 0.1, 0.5]).top_k(3).unwrap().len(), 3);
        assert!(set(&[0.9]).top_k(0).is_err());
        assert!(set(&[0.9]).top_k(2).is_err());
    }

    #[test]
    fn pseudo_val_sizes() {
        let t = tensor(1, 3, vec![-0.1, -2.0, -0.6, -0.8, -3.0, -0.05]);
        let cfg = SelectionConfig::default();
        let full = build_pseudo_val(&t, &cfg, Some(3)).unwrap();
        assert_eq!(full, build_pseudo_val(&t, &cfg, None).unwrap());
        let labels: Vec<&str> = full.entries.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["a", "a", "b"]);

        // Gaps in log space: 1.9, 0.2, 2.95.
        let one = build_pseudo_val(&t, &cfg, Some(1)).unwrap();
        assert_eq!(one.example_ids(), vec!["x2"]);
        assert!(build_pseudo_val(&t, &cfg, Some(4)).is_err());
    }

    #[test]
    fn pseudo_train_range() {
        let t = tensor(1, 2, vec![-0.1, -2.0, -0.6, -0.8]);
        let cfg = SelectionConfig::default();
        assert_eq!(top_confidence_pseudo_train(&t, &cfg, 2).unwrap().len(), 2);
        assert!(top_confidence_pseudo_train(&t, &cfg, 0).is_err());
        assert!(top_confidence_pseudo_train(&t, &cfg, 3).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let s = set(&[0.25, 0.5]);
        let text = s.to_jsonl();
        assert!(text.starts_with("{\"example_id\":\"x1\",\"label\":\"a\",\"gap\":0.25}"));
        assert_eq!(PseudoLabeledSet::from_jsonl(&text, "test").unwrap(), s);
    }

    #[test]
    fn checkpoint_selection() {
        let pv = pseudo(&["a", "a", "a", "a", "a", "a", "a", "a", "a", "a"]);
        let a = checkpoint("A", &["a", "a", "a", "a", "a", "a", "a", "a", "a", "b"]);
        let b = checkpoint("B", &["a", "a", "a", "a", "a", "a", "a", "b", "b", "b"]);
        assert_eq!(select_checkpoint(&[b.clone(), a.clone()], &pv).unwrap(), "A");
        assert_eq!(select_checkpoint(std::slice::from_ref(&a), &pv).unwrap(), "A");
        let a2 = CheckpointPredictions {
            checkpoint_id: "A2".into(),
            ..a.clone()
        };
        assert_eq!(select_checkpoint(&[a2, a.clone()], &pv).unwrap(), "A2");
        let scores = score_checkpoints(&[a, b], &pv).unwrap();
        assert_eq!(scores[0].1, 0.9);
        assert!((scores[1].1 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_coverage_mismatch() {
        let pv = pseudo(&["a", "a", "a"]);
        let short = checkpoint("A", &["a", "a"]);
        assert!(select_checkpoint(&[short], &pv).is_err());
        let a = checkpoint("A", &["a", "a", "a"]);
        let mut b = checkpoint("B", &["a", "a", "a"]);
        b.example_ids.reverse();
        assert!(select_checkpoint(&[a, b], &pv).is_err());
        assert!(select_checkpoint(&[], &pv).is_err());
    }

    #[test]
    fn multi_prompt_checkpoint_averages() {
        let pv = pseudo(&["a", "b"]);
        let c = CheckpointPredictions {
            checkpoint_id: "c".into(),
            example_ids: vec!["x0".into(), "x1".into()],
            rows: vec![
                ("p".into(), vec!["a".into(), "b".into()]),
                ("q".into(), vec!["b".into(), "b".into()]),
            ],
        };
        assert_eq!(checkpoint_agreement(&c, &pv).unwrap(), 0.75);
    }

    #[test]
    fn parses_prediction_lines() {
        let text = [
            r#"{"checkpoint_id":"s100","prompt_id":"p","example_id":"x0","pred":"a"}"#,
            r#"{"checkpoint_id":"s100","prompt_id":"p","example_id":"x1","pred":"b"}"#,
            r#"{"checkpoint_id":"s200","prompt_id":"p","example_id":"x0","pred":"a"}"#,
            r#"{"checkpoint_id":"s200","prompt_id":"p","example_id":"x1","pred":"a"}"#,
        ]
        .join("\n");
        let parsed = parse_checkpoint_predictions(&text).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].checkpoint_id, "s100");
        assert_eq!(parsed[1].rows[0].1, vec![LabelId::from("a"), LabelId::from("a")]);
        assert_eq!(select_checkpoint(&parsed, &pseudo(&["a", "a"])).unwrap(), "s200");

        let gap = r#"{"checkpoint_id":"s","prompt_id":"p","example_id":"x0","pred":"a"}
{"checkpoint_id":"s","prompt_id":"q","example_id":"x1","pred":"a"}"#;
        assert!(parse_checkpoint_predictions(gap).is_err());
    }

    #[test]
    fn usage_split_is_disjoint() {
        let n = 40;
        let values: Vec<f64> = (0..2)
            .flat_map(|i| (0..n).flat_map(move |k| if (k + i) % 3 == 0 { [-0.2, -1.7] } else { [-1.2, -0.4] }))
            .collect();
        let t = tensor(2, n, values);
        let gold: Vec<Option<LabelId>> = (0..n)
            .map(|k| Some(LabelId::from(if k % 2 == 0 { "a" } else { "b" })))
            .collect();
        let labeled: Vec<usize> = (0..32).collect();
        let report = evaluate_usage_strategies(&t, &gold, &labeled, &SelectionConfig::default(), 4).unwrap();
        let split = &report.rows[0];
        assert_eq!(split.train_ids.len(), 16);
        assert_eq!(split.val_size, 16);
        let train: HashSet<&String> = split.train_ids.iter().collect();
        let val: Vec<String> = (16..32).map(|k| format!("x{k}")).collect();
        assert!(val.iter().all(|id| !train.contains(id)));
        let more = &report.rows[3];
        assert_eq!(more.val_size, n - 32);
        assert_eq!(report.rows[2].val_size, 4);

        let mut missing = gold.clone();
        missing[3] = None;
        assert!(matches!(
            evaluate_usage_strategies(&t, &missing, &labeled, &SelectionConfig::default(), 4),
            Err(Error::MissingGold(_))
        ));
    }

    proptest! {
        #[test]
        fn top_k_is_monotone(gaps in proptest::collection::vec(0.0f64..1.0, 2..30)) {
            let s = set(&gaps);
            for k in 1..gaps.len() {
                let small: HashSet<String> = s.top_k(k).unwrap().example_ids().into_iter().map(String::from).collect();
                let big: HashSet<String> = s.top_k(k + 1).unwrap().example_ids().into_iter().map(String::from).collect();
                prop_assert!(small.is_subset(&big));
            }
        }
    }
}
