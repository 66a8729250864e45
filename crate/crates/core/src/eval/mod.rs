//! Post-hoc evaluation against gold labels, and desk-scale simulations on
//! synthetic prompt populations.

mod population;
mod simulate;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use population::Population;
pub use simulate::{
    compare_strategies, run_cell, simulate_robustness, simulate_usage_agreement, CellResult, RobustnessRow,
    RobustnessSpec, RobustnessTable, StrategyRow, StrategyTable, UsageAgreement, UsageTrial,
};

use crate::catalog::LabelId;
use crate::error::{Error, Result};
use crate::scoring::PredictionMatrix;
use crate::selection::{agreement, rank_candidates, SelectionReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEval {
    pub prompt_id: String,
    pub true_acc: f64,
    pub pseudo_acc: Option<f64>,
    pub confidence: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by pseudo accuracy (descending), prompts without one last.
    pub rows: Vec<PromptEval>,
    pub mean_acc: f64,
    pub median_acc: f64,
    pub selected: String,
    pub selected_acc: f64,
    pub pseudo_label_acc: f64,
    /// Rank correlation between pseudo and true accuracy over prompts that
    /// have both; `None` if undefined.
    pub spearman: Option<f64>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.prompt_id.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>10}  {:>8}  {:>10}  kept",
            "prompt", "pseudo_acc", "true_acc", "confidence"
        );
        for r in &self.rows {
            let pseudo = r.pseudo_acc.map_or("-".to_string(), |v| format!("{:.4}", v));
            let _ = writeln!(
                out,
                "{:<width$}  {:>10}  {:>8.4}  {:>10.3}  {}",
                r.prompt_id,
                pseudo,
                r.true_acc,
                r.confidence,
                if r.kept { "yes" } else { "no" }
            );
        }
        let _ = writeln!(out, "selected: {} (accuracy {:.4})", self.selected, self.selected_acc);
        let _ = writeln!(
            out,
            "candidates: mean {:.4}, median {:.4}",
            self.mean_acc, self.median_acc
        );
        let _ = writeln!(out, "pseudo-label accuracy: {:.4}", self.pseudo_label_acc);
        let _ = writeln!(
            out,
            "spearman(pseudo, true): {}",
            self.spearman.map_or("undefined".to_string(), |s| format!("{s:.4}"))
        );
        out
    }
}

/// Resolves gold labels to choice indices, failing on any gap.
pub fn gold_indices(example_ids: &[String], choices: &[LabelId], gold: &[Option<LabelId>]) -> Result<Vec<usize>> {
    if gold.len() != example_ids.len() {
        return Err(Error::InvalidInput(format!(
            "{} gold labels for {} examples",
            gold.len(),
            example_ids.len()
        )));
    }
    let missing: Vec<String> = example_ids
        .iter()
        .zip(gold)
        .filter(|(_, g)| g.is_none())
        .map(|(id, _)| id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGold(missing));
    }
    gold.iter()
        .map(|g| {
            let g = g.as_ref().expect("checked above");
            choices
                .iter()
                .position(|c| c == g)
                .ok_or_else(|| Error::UnknownLabel(g.0.clone()))
        })
        .collect()
}

/// True accuracy of every prompt row.
pub fn true_accuracies(preds: &PredictionMatrix, gold: &[usize]) -> Result<Vec<f64>> {
    (0..preds.num_prompts())
        .map(|i| agreement(preds.row(i), gold))
        .collect()
}

/// Scores a selection against gold labels.
pub fn evaluate(preds: &PredictionMatrix, report: &SelectionReport, gold: &[Option<LabelId>]) -> Result<EvalReport> {
    let gold = gold_indices(preds.example_ids(), preds.choices(), gold)?;
    if report.example_ids != preds.example_ids() {
        return Err(Error::InvalidInput(
            "selection report and predictions cover different examples".into(),
        ));
    }
    let accs = true_accuracies(preds, &gold)?;
    let true_acc: BTreeMap<String, f64> = preds.prompt_ids().iter().cloned().zip(accs.iter().copied()).collect();

    let mut pseudo = report.pseudo_acc.clone();
    if let Some(extra) = &report.discarded_pseudo_acc {
        pseudo.extend(extra.iter().map(|(k, v)| (k.clone(), *v)));
    }
    let order = rank_candidates(preds.prompt_ids(), &pseudo, &report.confidence.scores);
    let rows: Vec<PromptEval> = order
        .iter()
        .map(|id| PromptEval {
            prompt_id: id.clone(),
            true_acc: true_acc[id],
            pseudo_acc: pseudo.get(id).copied(),
            confidence: report.confidence.scores.get(id).copied().unwrap_or(0.0),
            kept: report.confidence.kept.contains(id),
        })
        .collect();

    let selected_acc = *true_acc
        .get(&report.selected)
        .ok_or_else(|| Error::Invariant(format!("selected prompt `{}` has no predictions", report.selected)))?;
    let pseudo_labels = report
        .pseudo_labels
        .iter()
        .map(|l| {
            preds
                .choices()
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| Error::UnknownLabel(l.0.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let paired: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.pseudo_acc.map(|p| (p, r.true_acc)))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();

    Ok(EvalReport {
        mean_acc: accs.iter().sum::<f64>() / accs.len() as f64,
        median_acc: median(&accs),
        selected: report.selected.clone(),
        selected_acc,
        pseudo_label_acc: agreement(&pseudo_labels, &gold)?,
        spearman: spearman(&xs, &ys),
        rows,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Ranks starting at 1; tied values share their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreTensor;
    use crate::selection::{select, SelectionConfig};

    /// 1 - 6 Σd² / (n(n² - 1)) with ranks found by counting smaller values.
    fn spearman_by_counting(xs: &[f64], ys: &[f64]) -> f64 {
        let rank = |v: &[f64], i: usize| v.iter().filter(|&&w| w < v[i]).count() as f64;
        let n = xs.len() as f64;
        let d2: f64 = (0..xs.len()).map(|i| (rank(xs, i) - rank(ys, i)).powi(2)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn spearman_matches_counting_oracle() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[0.9, 0.5, 0.7], &[0.8, 0.6, 0.55]),
            (&[0.1, 0.2, 0.3, 0.4], &[0.4, 0.3, 0.2, 0.1]),
            (&[0.3, 0.1, 0.2, 0.5, 0.4], &[0.31, 0.12, 0.5, 0.2, 0.41]),
            (&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
        ];
        for (xs, ys) in cases {
            let got = spearman(xs, ys).unwrap();
            assert!((got - spearman_by_counting(xs, ys)).abs() < 1e-12, "{xs:?} {ys:?}");
        }
        assert_eq!(spearman(&[1.0, 1.0], &[0.0, 1.0]), None);
        assert_eq!(spearman(&[1.0], &[1.0]), None);
    }

    #[test]
    fn ties_share_ranks() {
        assert_eq!(average_ranks(&[0.5, 0.1, 0.5]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn perfect_predictions_score_one() {
        let t = ScoreTensor::new(
            vec!["p".into()],
            vec!["x0".into(), "x1".into()],
            vec!["a".into(), "b".into()],
            vec![-0.1, -2.0, -1.5, -0.3],
        )
        .unwrap();
        let preds = crate::scoring::predict(&t);
        let report = select(&t, &SelectionConfig::default()).unwrap();
        let gold = vec![Some(LabelId::from("a")), Some(LabelId::from("b"))];
        let e = evaluate(&preds, &report, &gold).unwrap();
        assert_eq!(e.selected_acc, 1.0);
        assert_eq!(e.rows[0].true_acc, 1.0);
        assert_eq!(e.pseudo_label_acc, 1.0);

        let missing = vec![Some(LabelId::from("a")), None];
        match evaluate(&preds, &report, &missing) {
            Err(Error::MissingGold(ids)) => assert_eq!(ids, vec!["x1".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn accuracies_ignore_example_order() {
        let preds = PredictionMatrix::new(
            vec!["p".into(), "q".into()],
            vec!["x0".into(), "x1".into(), "x2".into()],
            vec!["a".into(), "b".into()],
            vec![0, 1, 1, 1, 1, 0],
        )
        .unwrap();
        let shuffled = PredictionMatrix::new(
            vec!["p".into(), "q".into()],
            vec!["x2".into(), "x0".into(), "x1".into()],
            vec!["a".into(), "b".into()],
            vec![1, 0, 1, 0, 1, 1],
        )
        .unwrap();
        let a = true_accuracies(&preds, &[0, 1, 0]).unwrap();
        let b = true_accuracies(&shuffled, &[0, 0, 1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[0.3, 0.1, 0.2]), 0.2);
        assert_eq!(median(&[0.4, 0.1, 0.2, 0.3]), 0.25);
    }
}
