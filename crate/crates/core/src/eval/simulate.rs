use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::population::Population;
use super::true_accuracies;
use crate::error::{Error, Result};
use crate::fewshot::{evaluate_usage_strategies, UsageStrategy};
use crate::scoring::{predict, ScoreTensor, DEFAULT_SHARED_DIFFICULTY};
use crate::selection::{agreement, select, EnsembleStrategy, SelectionConfig};

fn default_choices() -> usize {
    2
}

fn default_true() -> bool {
    true
}

fn default_shared_difficulty() -> f64 {
    DEFAULT_SHARED_DIFFICULTY
}

/// A population of base prompts, a share of which is swapped for
/// low-quality adversarial prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSpec {
    pub base_qualities: Vec<f64>,
    /// Adversarial qualities are drawn uniformly from `[lo, hi]`.
    pub adversarial_quality: [f64; 2],
    /// Fractions of base prompts to replace, each in `[0, 1]`.
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n: usize,
    #[serde(default = "default_choices")]
    pub num_choices: usize,
    #[serde(default)]
    pub strategy: EnsembleStrategy,
    #[serde(default = "default_true")]
    pub filter: bool,
    /// How often prompts share an example's correctness draw; see
    /// [`SyntheticBackend`](crate::scoring::SyntheticBackend).
    #[serde(default = "default_shared_difficulty")]
    pub shared_difficulty: f64,
}

impl Default for RobustnessSpec {
    fn default() -> Self {
        Self {
            base_qualities: vec![0.68, 0.70, 0.72, 0.74, 0.75, 0.75, 0.76, 0.78, 0.80, 0.82],
            adversarial_quality: [0.45, 0.55],
            ratios: vec![0.1, 0.2, 0.5, 0.8],
            seeds: vec![1, 2, 3, 4, 5],
            n: 500,
            num_choices: 2,
            strategy: EnsembleStrategy::LogprobMean,
            filter: true,
            shared_difficulty: DEFAULT_SHARED_DIFFICULTY,
        }
    }
}

impl RobustnessSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        if self.base_qualities.is_empty() {
            return bad("base_qualities is empty".into());
        }
        if let Some(q) = self.base_qualities.iter().find(|q| !(0.0..=1.0).contains(*q)) {
            return bad(format!("base quality {q} is outside [0, 1]"));
        }
        let [lo, hi] = self.adversarial_quality;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return bad(format!("adversarial_quality [{lo}, {hi}] is not a range inside [0, 1]"));
        }
        if self.ratios.is_empty() {
            return bad("ratios is empty".into());
        }
        if let Some(r) = self.ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("ratio {r} is outside [0, 1]"));
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.num_choices < 2 {
            return bad("num_choices must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.shared_difficulty) {
            return bad(format!(
                "shared_difficulty {} is outside [0, 1]",
                self.shared_difficulty
            ));
        }
        Ok(())
    }

    fn config(&self, strategy: EnsembleStrategy) -> SelectionConfig {
        SelectionConfig {
            strategy,
            filter: self.filter,
            score_all_prompts: false,
        }
    }

    /// Prompt qualities after replacing `ratio` of the base prompts.
    ///
    /// The replacement order and adversarial qualities depend on the seed
    /// only, so a larger ratio replaces a superset of prompts.
    pub fn population_qualities(&self, ratio: f64, seed: u64) -> Vec<(String, f64)> {
        let p = self.base_qualities.len();
        let replaced = ((ratio * p as f64).round() as usize).min(p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..p).collect();
        order.shuffle(&mut rng);
        let [lo, hi] = self.adversarial_quality;
        let adversarial: Vec<f64> = (0..p).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect();
        let mut qualities: Vec<(String, f64)> = self
            .base_qualities
            .iter()
            .enumerate()
            .map(|(i, &q)| (format!("base-{i:02}"), q))
            .collect();
        for (slot, &i) in order[..replaced].iter().enumerate() {
            qualities[i] = (format!("adv-{i:02}"), adversarial[slot]);
        }
        qualities
    }
}

/// Outcome of one (ratio, seed, strategy) simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub ratio: f64,
    pub seed: u64,
    pub strategy: EnsembleStrategy,
    pub num_adversarial: usize,
    pub kept: usize,
    pub selected: String,
    /// True accuracy of the selected prompt.
    pub zps_accuracy: f64,
    /// Mean true accuracy over all candidates.
    pub candidate_mean: f64,
    pub pseudo_label_accuracy: f64,
}

fn build_cell(spec: &RobustnessSpec, ratio: f64, seed: u64) -> Result<(ScoreTensor, Vec<usize>, usize)> {
    let qualities = spec.population_qualities(ratio, seed);
    let adversarial = qualities.iter().filter(|(id, _)| id.starts_with("adv-")).count();
    let population =
        Population::new(&qualities, spec.n, spec.num_choices, seed)?.with_shared_difficulty(spec.shared_difficulty)?;
    Ok((population.tensor()?, population.gold, adversarial))
}

fn score_cell(
    tensor: &ScoreTensor,
    gold: &[usize],
    config: &SelectionConfig,
    ratio: f64,
    seed: u64,
    num_adversarial: usize,
) -> Result<CellResult> {
    let report = select(tensor, config)?;
    let accs = true_accuracies(&predict(tensor), gold)?;
    let selected_row = tensor
        .prompt_index(&report.selected)
        .ok_or_else(|| Error::Invariant("selected prompt missing from tensor".into()))?;
    let pseudo: Vec<usize> = report
        .pseudo_labels
        .iter()
        .map(|l| tensor.choices().iter().position(|c| c == l).expect("label from tensor"))
        .collect();
    Ok(CellResult {
        ratio,
        seed,
        strategy: config.strategy,
        num_adversarial,
        kept: report.confidence.kept.len(),
        zps_accuracy: accs[selected_row],
        candidate_mean: accs.iter().sum::<f64>() / accs.len() as f64,
        pseudo_label_accuracy: agreement(&pseudo, gold)?,
        selected: report.selected,
    })
}

/// Runs the full pipeline on one synthetic population.
pub fn run_cell(spec: &RobustnessSpec, ratio: f64, seed: u64) -> Result<CellResult> {
    let (tensor, gold, adv) = build_cell(spec, ratio, seed)?;
    score_cell(&tensor, &gold, &spec.config(spec.strategy), ratio, seed, adv)
}

#[cfg(feature = "parallel")]
fn map_cells<T, F>(cells: &[(f64, u64)], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(f64, u64) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    cells.par_iter().map(|&(r, s)| f(r, s)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_cells<T, F>(cells: &[(f64, u64)], f: F) -> Result<Vec<T>>
where
    F: Fn(f64, u64) -> Result<T>,
{
    cells.iter().map(|&(r, s)| f(r, s)).collect()
}

fn grid(spec: &RobustnessSpec) -> Vec<(f64, u64)> {
    spec.ratios
        .iter()
        .flat_map(|&r| spec.seeds.iter().map(move |&s| (r, s)))
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub ratio: f64,
    pub zps_mean: f64,
    pub zps_std: f64,
    pub candidate_mean: f64,
    pub candidate_std: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub strategy: EnsembleStrategy,
    pub filter: bool,
    pub rows: Vec<RobustnessRow>,
    pub cells: Vec<CellResult>,
}

impl RobustnessTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "robustness ({}, filter {})",
            self.strategy,
            if self.filter { "on" } else { "off" }
        );
        let _ = writeln!(
            out,
            "{:>6}  {:>16}  {:>16}  {:>7}",
            "ratio", "zps", "candidate mean", "gain"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>6.2}  {:>8.4} ± {:<5.4}  {:>8.4} ± {:<5.4}  {:>+7.4}",
                r.ratio, r.zps_mean, r.zps_std, r.candidate_mean, r.candidate_std, r.gain
            );
        }
        out
    }
}

/// Replaces each ratio of base prompts with adversarial ones and compares
/// the selected prompt's true accuracy with the candidate mean.
pub fn simulate_robustness(spec: &RobustnessSpec) -> Result<RobustnessTable> {
    spec.validate()?;
    let cells = map_cells(&grid(spec), |r, s| run_cell(spec, r, s))?;
    let rows = spec
        .ratios
        .iter()
        .map(|&ratio| {
            let here: Vec<&CellResult> = cells.iter().filter(|c| c.ratio == ratio).collect();
            let (zps_mean, zps_std) = mean_std(&here.iter().map(|c| c.zps_accuracy).collect::<Vec<_>>());
            let (candidate_mean, candidate_std) = mean_std(&here.iter().map(|c| c.candidate_mean).collect::<Vec<_>>());
            RobustnessRow {
                ratio,
                zps_mean,
                zps_std,
                candidate_mean,
                candidate_std,
                gain: zps_mean - candidate_mean,
            }
        })
        .collect();
    Ok(RobustnessTable {
        strategy: spec.strategy,
        filter: spec.filter,
        rows,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: EnsembleStrategy,
    pub pseudo_label_acc_mean: f64,
    pub pseudo_label_acc_std: f64,
    pub selected_acc_mean: f64,
    pub selected_acc_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTable {
    pub filter: bool,
    pub rows: Vec<StrategyRow>,
    /// One entry per (ratio, seed, strategy), strategies innermost.
    pub cells: Vec<CellResult>,
}

impl StrategyTable {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "ensemble strategies (filter {})",
            if self.filter { "on" } else { "off" }
        );
        let _ = writeln!(
            out,
            "{:<14}  {:>18}  {:>18}",
            "strategy", "pseudo-label acc", "selected acc"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14}  {:>9.4} ± {:<6.4}  {:>9.4} ± {:<6.4}",
                r.strategy.as_str(),
                r.pseudo_label_acc_mean,
                r.pseudo_label_acc_std,
                r.selected_acc_mean,
                r.selected_acc_std
            );
        }
        out
    }
}

/// Runs every ensemble strategy on the same simulated populations. The
/// spec's own `strategy` is ignored.
pub fn compare_strategies(spec: &RobustnessSpec) -> Result<StrategyTable> {
    spec.validate()?;
    let per_cell = map_cells(&grid(spec), |ratio, seed| {
        let (tensor, gold, adv) = build_cell(spec, ratio, seed)?;
        EnsembleStrategy::ALL
            .iter()
            .map(|&st| score_cell(&tensor, &gold, &spec.config(st), ratio, seed, adv))
            .collect::<Result<Vec<_>>>()
    })?;
    let cells: Vec<CellResult> = per_cell.into_iter().flatten().collect();
    let rows = EnsembleStrategy::ALL
        .iter()
        .map(|&strategy| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.strategy == strategy).collect();
            let (pseudo_label_acc_mean, pseudo_label_acc_std) =
                mean_std(&mine.iter().map(|c| c.pseudo_label_accuracy).collect::<Vec<_>>());
            let (selected_acc_mean, selected_acc_std) =
                mean_std(&mine.iter().map(|c| c.zps_accuracy).collect::<Vec<_>>());
            StrategyRow {
                strategy,
                pseudo_label_acc_mean,
                pseudo_label_acc_std,
                selected_acc_mean,
                selected_acc_std,
            }
        })
        .collect();
    Ok(StrategyTable {
        filter: spec.filter,
        rows,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageTrial {
    pub seed: u64,
    pub gold_val_selection: String,
    pub pseudo_val_selection: String,
    pub oracle_selection: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageAgreement {
    pub trials: Vec<UsageTrial>,
    pub agreements: usize,
    pub rate: f64,
}

/// Over seeded synthetic populations, how often the prompt chosen with all
/// pseudo-labeled data matches the one chosen on a small gold validation
/// half. The first `labeled` examples form the gold set.
pub fn simulate_usage_agreement(
    qualities: &[(String, f64)],
    n: usize,
    labeled: usize,
    pseudo_k: usize,
    seeds: &[u64],
    config: &SelectionConfig,
) -> Result<UsageAgreement> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("no seeds".into()));
    }
    let labeled_idx: Vec<usize> = (0..labeled).collect();
    let trials = seeds
        .iter()
        .map(|&seed| {
            let population = Population::new(qualities, n, 2, seed)?;
            let tensor = population.tensor()?;
            let report = evaluate_usage_strategies(&tensor, &population.gold_labels(), &labeled_idx, config, pseudo_k)?;
            let pseudo = report
                .rows
                .iter()
                .find(|r| r.strategy == UsageStrategy::MorePseudoVal)
                .expect("usage report has every strategy");
            Ok(UsageTrial {
                seed,
                gold_val_selection: report.gold_val_selection.clone(),
                pseudo_val_selection: pseudo.selected.clone(),
                oracle_selection: report.oracle_selection.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let agreements = trials
        .iter()
        .filter(|t| t.gold_val_selection == t.pseudo_val_selection)
        .count();
    Ok(UsageAgreement {
        rate: agreements as f64 / trials.len() as f64,
        agreements,
        trials,
    })
}
