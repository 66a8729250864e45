use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{argmax, ScoreTensor};

/// How member prompts are combined into one score per choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleStrategy {
    /// Mean of log-probabilities.
    #[default]
    LogprobMean,
    /// Mean of probabilities.
    ProbMean,
    /// Count of member argmax predictions.
    MajorityVote,
}

impl EnsembleStrategy {
    pub const ALL: [EnsembleStrategy; 3] = [
        EnsembleStrategy::LogprobMean,
        EnsembleStrategy::ProbMean,
        EnsembleStrategy::MajorityVote,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EnsembleStrategy::LogprobMean => "logprob_mean",
            EnsembleStrategy::ProbMean => "prob_mean",
            EnsembleStrategy::MajorityVote => "majority_vote",
        }
    }
}

impl fmt::Display for EnsembleStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnsembleStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnsembleStrategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown strategy `{s}` (expected logprob_mean|prob_mean|majority_vote)"
                ))
            })
    }
}

/// Ensemble scores and predictions over all examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    /// Predicted choice index per example.
    pub labels: Vec<usize>,
    /// Example-major `n × c` ensemble scores. Majority votes are stored as
    /// the fraction of members voting for each choice.
    pub scores: Vec<f64>,
    num_choices: usize,
}

impl Ensemble {
    pub fn example_scores(&self, k: usize) -> &[f64] {
        &self.scores[k * self.num_choices..(k + 1) * self.num_choices]
    }

    /// Top-1 minus top-2 ensemble score for example `k`.
    pub fn gap(&self, k: usize) -> f64 {
        top_two_gap(self.example_scores(k))
    }

    pub fn gaps(&self) -> Vec<f64> {
        (0..self.labels.len()).map(|k| self.gap(k)).collect()
    }
}

pub(crate) fn top_two_gap(values: &[f64]) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in values {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    first - second
}

/// Combines the member prompts (indices into `tensor`) into pseudo-labels.
///
/// Members are reduced in ascending prompt_id order so sums do not depend
/// on the order prompts were listed. Score ties go to the earliest declared
/// choice; vote ties are first broken by the members' summed log-probability.
pub fn ensemble_predict(tensor: &ScoreTensor, members: &[usize], strategy: EnsembleStrategy) -> Result<Ensemble> {
    if members.is_empty() {
        return Err(Error::InvalidInput("ensemble needs at least one member prompt".into()));
    }
    if let Some(bad) = members.iter().find(|&&i| i >= tensor.num_prompts()) {
        return Err(Error::InvalidInput(format!("member index {bad} out of range")));
    }
    let mut order = members.to_vec();
    order.sort_by(|&a, &b| tensor.prompt_ids()[a].cmp(&tensor.prompt_ids()[b]));
    order.dedup();

    let (n, c) = (tensor.num_examples(), tensor.num_choices());
    let m = order.len() as f64;
    let mut labels = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n * c);
    for k in 0..n {
        let mut s = vec![0.0; c];
        let label = match strategy {
            EnsembleStrategy::LogprobMean | EnsembleStrategy::ProbMean => {
                for &i in &order {
                    for (acc, &lp) in s.iter_mut().zip(tensor.cell(i, k)) {
                        *acc += match strategy {
                            EnsembleStrategy::LogprobMean => lp,
                            _ => lp.exp(),
                        };
                    }
                }
                s.iter_mut().for_each(|v| *v /= m);
                argmax(&s)
            }
            EnsembleStrategy::MajorityVote => {
                let mut votes = vec![0usize; c];
                let mut summed = vec![0.0; c];
                for &i in &order {
                    let cell = tensor.cell(i, k);
                    votes[argmax(cell)] += 1;
                    for (acc, &lp) in summed.iter_mut().zip(cell) {
                        *acc += lp;
                    }
                }
                let top = *votes.iter().max().expect("at least one choice");
                let mut best: Option<usize> = None;
                for j in (0..c).filter(|&j| votes[j] == top) {
                    if best.is_none_or(|b| summed[j] > summed[b]) {
                        best = Some(j);
                    }
                }
                for (acc, v) in s.iter_mut().zip(&votes) {
                    *acc = *v as f64 / m;
                }
                best.expect("some choice has the top vote")
            }
        };
        labels.push(label);
        scores.extend(s);
    }
    Ok(Ensemble {
        labels,
        scores,
        num_choices: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::LabelId;

    fn tensor(p: usize, n: usize, c: usize, values: Vec<f64>) -> ScoreTensor {
        ScoreTensor::new(
            (0..p).map(|i| format!("p{i}")).collect(),
            (0..n).map(|k| format!("x{k}")).collect(),
            (0..c).map(|j| LabelId(format!("y{j}"))).collect(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn logprob_mean_hand_example() {
        // prompt1 (-1, -2), prompt2 (-3, -1): means (-2, -1.5) -> B.
        let t = tensor(2, 1, 2, vec![-1.0, -2.0, -3.0, -1.0]);
        let e = ensemble_predict(&t, &[0, 1], EnsembleStrategy::LogprobMean).unwrap();
        assert_eq!(e.example_scores(0), &[-2.0, -1.5]);
        assert_eq!(e.labels, vec![1]);
    }

    #[test]
    fn majority_vote_counts() {
        let a = [-0.1, -2.0];
        let b = [-2.0, -0.1];
        let values = [a, a, b].concat();
        let t = tensor(3, 1, 2, values);
        let e = ensemble_predict(&t, &[0, 1, 2], EnsembleStrategy::MajorityVote).unwrap();
        assert_eq!(e.labels, vec![0]);
        assert!((e.gap(0) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn vote_tie_uses_summed_logprob_then_order() {
        // One vote each; summed logprobs favour choice 1.
        let t = tensor(2, 1, 2, vec![-0.6, -0.8, -3.0, -0.1]);
        let e = ensemble_predict(&t, &[0, 1], EnsembleStrategy::MajorityVote).unwrap();
        assert_eq!(e.labels, vec![1]);
        // Fully symmetric: first choice.
        let t = tensor(2, 1, 2, vec![-0.1, -0.9, -0.9, -0.1]);
        let e = ensemble_predict(&t, &[0, 1], EnsembleStrategy::MajorityVote).unwrap();
        assert_eq!(e.labels, vec![0]);
    }

    #[test]
    fn single_member_reproduces_its_predictions() {
        let t = tensor(
            2,
            3,
            3,
            vec![
                -0.2, -1.9, -3.0, -2.0, -0.3, -1.5, -1.1, -1.2, -0.9, -0.5, -0.6, -3.0, -2.0, -2.1, -0.1, -0.4, -1.2,
                -2.9,
            ],
        );
        let preds = crate::scoring::predict(&t);
        for strategy in EnsembleStrategy::ALL {
            let e = ensemble_predict(&t, &[1], strategy).unwrap();
            assert_eq!(e.labels, preds.row(1), "{strategy}");
        }
    }

    #[test]
    fn identical_members_agree_across_strategies() {
        let row = vec![-0.2, -1.9, -2.0, -0.3, -1.1, -1.2];
        let t = tensor(3, 3, 2, [row.clone(), row.clone(), row].concat());
        let results: Vec<_> = EnsembleStrategy::ALL
            .iter()
            .map(|&s| ensemble_predict(&t, &[0, 1, 2], s).unwrap().labels)
            .collect();
        assert!(results.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn member_order_does_not_matter() {
        let t = tensor(
            3,
            2,
            2,
            vec![-0.3, -1.2, -0.7, -0.69, -1.0, -0.5, -0.2, -1.8, -0.9, -0.6, -0.4, -1.1],
        );
        for strategy in EnsembleStrategy::ALL {
            let a = ensemble_predict(&t, &[0, 1, 2], strategy).unwrap();
            let b = ensemble_predict(&t, &[2, 0, 1], strategy).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_members_rejected() {
        let t = tensor(1, 1, 2, vec![-1.0, -2.0]);
        assert!(ensemble_predict(&t, &[], EnsembleStrategy::LogprobMean).is_err());
        assert!(ensemble_predict(&t, &[3], EnsembleStrategy::LogprobMean).is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in EnsembleStrategy::ALL {
            assert_eq!(s.as_str().parse::<EnsembleStrategy>().unwrap(), s);
        }
        assert!("median".parse::<EnsembleStrategy>().is_err());
    }
}
