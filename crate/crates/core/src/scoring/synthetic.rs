//! Deterministic stand-in scorer with planted labels and per-prompt quality.
//!
//! For prompt `i` and example `k` a ChaCha stream seeded from
//! `sha256(seed, prompt_id, example_id)` yields uniforms `w, u1, u2, u3`.
//! A second stream seeded from `sha256(seed, example_id)` yields a shared
//! pair `s1, s3`. With probability `shared_difficulty` (`w < shared_difficulty`)
//! the cell uses `u1 = s1, u3 = s3`, so prompts tend to fail on the same
//! examples and in the same direction. Each prompt's accuracy is still `q`
//! in expectation. With `c` choices and quality `q`:
//!
//! * the planted label wins iff `u1 < q`; otherwise the winner is the
//!   non-planted choice at `floor(u3 * (c - 1))`;
//! * `sharpness = 0.15 + 0.85 * clamp((q - 1/c) / (1 - 1/c), 0, 1)`;
//! * the winning margin is `m = sharpness * sqrt(u2)` when correct and
//!   `m = 0.5 * sharpness * u2^2` when wrong, so confident answers are more
//!   often right;
//! * the winner gets probability `1/c + (1 - 1/c) * m` and the remaining
//!   mass is split evenly across the other choices.
//!
//! Scores are the natural logs of those probabilities.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::backend::{Capabilities, ScoreRequest, ScorerBackend};
use crate::catalog::LabelId;
use crate::error::{Error, Result};

/// Default probability that a cell draws its correctness from the shared
/// per-example stream.
pub const DEFAULT_SHARED_DIFFICULTY: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    seed: u64,
    quality: BTreeMap<String, f64>,
    planted: BTreeMap<String, LabelId>,
    shared_difficulty: f64,
}

impl SyntheticBackend {
    pub fn new(seed: u64, quality: BTreeMap<String, f64>, planted: BTreeMap<String, LabelId>) -> Result<Self> {
        if let Some((id, q)) = quality.iter().find(|(_, q)| !(0.0..=1.0).contains(*q)) {
            return Err(Error::InvalidInput(format!(
                "quality {q} for prompt `{id}` is outside [0, 1]"
            )));
        }
        Ok(Self {
            seed,
            quality,
            planted,
            shared_difficulty: DEFAULT_SHARED_DIFFICULTY,
        })
    }

    /// Sets how strongly errors are shared across prompts; 0 makes every
    /// cell independent.
    pub fn with_shared_difficulty(mut self, rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidInput(format!(
                "shared difficulty {rho} is outside [0, 1]"
            )));
        }
        self.shared_difficulty = rho;
        Ok(self)
    }

    pub fn shared_difficulty(&self) -> f64 {
        self.shared_difficulty
    }

    pub fn planted(&self) -> &BTreeMap<String, LabelId> {
        &self.planted
    }

    /// Choice probabilities for one cell, aligned with `labels`.
    pub fn probabilities(&self, prompt_id: &str, example_id: &str, labels: &[LabelId]) -> Result<Vec<f64>> {
        let q = *self
            .quality
            .get(prompt_id)
            .ok_or_else(|| Error::InvalidInput(format!("no quality for prompt `{prompt_id}`")))?;
        let planted = self
            .planted
            .get(example_id)
            .ok_or_else(|| Error::InvalidInput(format!("no planted label for example `{example_id}`")))?;
        let truth = labels
            .iter()
            .position(|l| l == planted)
            .ok_or_else(|| Error::UnknownLabel(planted.0.clone()))?;
        let c = labels.len();
        if c < 2 {
            return Err(Error::InvalidInput("synthetic scoring needs at least 2 choices".into()));
        }

        let mut rng = cell_rng(self.seed, prompt_id, example_id);
        let w: f64 = rng.gen();
        let mut u1: f64 = rng.gen();
        // (0, 1] keeps every margin strictly positive.
        let u2: f64 = 1.0 - rng.gen::<f64>();
        let mut u3: f64 = rng.gen();
        if w < self.shared_difficulty {
            let mut shared = example_rng(self.seed, example_id);
            u1 = shared.gen();
            u3 = shared.gen();
        }

        let chance = 1.0 / c as f64;
        let sharpness = 0.15 + 0.85 * ((q - chance) / (1.0 - chance)).clamp(0.0, 1.0);
        let correct = u1 < q;
        let (winner, margin) = if correct {
            (truth, sharpness * u2.sqrt())
        } else {
            let mut other = ((u3 * (c - 1) as f64) as usize).min(c - 2);
            if other >= truth {
                other += 1;
            }
            (other, 0.5 * sharpness * u2 * u2)
        };
        let top = chance + (1.0 - chance) * margin;
        let rest = (1.0 - top) / (c - 1) as f64;
        Ok((0..c).map(|j| if j == winner { top } else { rest }).collect())
    }
}

fn cell_rng(seed: u64, prompt_id: &str, example_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((prompt_id.len() as u64).to_le_bytes());
    hasher.update(prompt_id.as_bytes());
    hasher.update(example_id.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn example_rng(seed: u64, example_id: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"example");
    hasher.update(seed.to_le_bytes());
    hasher.update(example_id.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

impl ScorerBackend for SyntheticBackend {
    fn model_name(&self) -> &str {
        "synthetic"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            max_batch: 256,
            per_token: true,
        }
    }

    fn score_batch(&self, batch: &[ScoreRequest]) -> Result<Vec<Vec<f64>>> {
        batch
            .iter()
            .map(|req| {
                let probs = self.probabilities(&req.prompt_id, &req.example_id, &req.labels)?;
                Ok(probs.into_iter().map(f64::ln).collect())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend(q: f64, n: usize) -> (SyntheticBackend, Vec<LabelId>) {
        let labels = vec![LabelId::from("a"), LabelId::from("b")];
        let planted = (0..n).map(|k| (format!("x{k}"), labels[k % 2].clone())).collect();
        let quality = [("p".to_string(), q)].into_iter().collect();
        (SyntheticBackend::new(7, quality, planted).unwrap(), labels)
    }

    fn agreement(q: f64, n: usize) -> f64 {
        let (b, labels) = backend(q, n);
        let hits = (0..n)
            .filter(|k| {
                let probs = b.probabilities("p", &format!("x{k}"), &labels).unwrap();
                let winner = if probs[1] > probs[0] { 1 } else { 0 };
                labels[winner] == b.planted()[&format!("x{k}")]
            })
            .count();
        hits as f64 / n as f64
    }

    #[test]
    fn perfect_and_inverted_quality() {
        assert_eq!(agreement(1.0, 300), 1.0);
        assert_eq!(agreement(0.0, 300), 0.0);
    }

    #[test]
    fn empirical_quality_near_target() {
        let acc = agreement(0.7, 1000);
        assert!((acc - 0.7).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn deterministic_and_normalized() {
        let (b, labels) = backend(0.6, 4);
        let first = b.probabilities("p", "x1", &labels).unwrap();
        assert_eq!(first, b.probabilities("p", "x1", &labels).unwrap());
        assert!((first.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(first[0] != first[1]);
    }

    #[test]
    fn rejects_out_of_range_quality() {
        let quality = [("p".to_string(), 1.5)].into_iter().collect();
        assert!(SyntheticBackend::new(0, quality, BTreeMap::new()).is_err());
    }

    #[test]
    fn many_choices_keep_winner_on_top() {
        let labels: Vec<LabelId> = ["a", "b", "c", "d"].into_iter().map(LabelId::from).collect();
        let planted = [("x".to_string(), LabelId::from("c"))].into_iter().collect();
        let quality = [("p".to_string(), 0.3)].into_iter().collect();
        let b = SyntheticBackend::new(3, quality, planted).unwrap();
        let probs = b.probabilities("p", "x", &labels).unwrap();
        let top = probs.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(probs.iter().filter(|&&v| v == top).count(), 1);
    }

    #[test]
    fn closed_form_by_hand() {
        let labels = vec![LabelId::from("a"), LabelId::from("b")];
        let planted = [("x".to_string(), LabelId::from("b"))].into_iter().collect();
        let quality = [("p".to_string(), 0.8)].into_iter().collect();
        let b = SyntheticBackend::new(5, quality, planted)
            .unwrap()
            .with_shared_difficulty(0.0)
            .unwrap();
        let mut rng = cell_rng(5, "p", "x");
        let _w: f64 = rng.gen();
        let u1: f64 = rng.gen();
        let u2: f64 = 1.0 - rng.gen::<f64>();
        // sharpness = 0.15 + 0.85 * (0.8 - 0.5) / 0.5 = 0.66
        let margin = if u1 < 0.8 { 0.66 * u2.sqrt() } else { 0.33 * u2 * u2 };
        let top = 0.5 + 0.5 * margin;
        let want = if u1 < 0.8 { [1.0 - top, top] } else { [top, 1.0 - top] };
        let got = b.probabilities("p", "x", &labels).unwrap();
        assert!(
            (got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12,
            "{got:?} {want:?}"
        );
    }

    #[test]
    fn shared_difficulty_couples_prompts() {
        let labels = vec![LabelId::from("a"), LabelId::from("b")];
        let n = 400;
        let planted: BTreeMap<String, LabelId> = (0..n).map(|k| (format!("x{k}"), labels[k % 2].clone())).collect();
        let quality: BTreeMap<String, f64> = [("p".to_string(), 0.6), ("q".to_string(), 0.6)].into_iter().collect();
        let same = |rho: f64| {
            let b = SyntheticBackend::new(9, quality.clone(), planted.clone())
                .unwrap()
                .with_shared_difficulty(rho)
                .unwrap();
            (0..n)
                .filter(|k| {
                    let x = format!("x{k}");
                    let p = b.probabilities("p", &x, &labels).unwrap();
                    let q = b.probabilities("q", &x, &labels).unwrap();
                    (p[0] > p[1]) == (q[0] > q[1])
                })
                .count()
        };
        assert_eq!(same(1.0), n);
        assert!(same(0.0) < n * 3 / 5 + 40);
        assert!(SyntheticBackend::new(9, quality, planted)
            .unwrap()
            .with_shared_difficulty(1.2)
            .is_err());
    }

    #[test]
    fn quality_holds_under_full_sharing() {
        let (b, labels) = backend(0.7, 1000);
        let b = b.with_shared_difficulty(1.0).unwrap();
        let hits = (0..1000)
            .filter(|k| {
                let probs = b.probabilities("p", &format!("x{k}"), &labels).unwrap();
                labels[if probs[1] > probs[0] { 1 } else { 0 }] == b.planted()[&format!("x{k}")]
            })
            .count();
        assert!((hits as f64 / 1000.0 - 0.7).abs() <= 0.05, "{hits}");
    }
}
