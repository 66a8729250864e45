//! Scoring prompted examples with a frozen scorer.

mod backend;
mod cache;
#[cfg(feature = "remote")]
mod remote;
mod synthetic;
mod tensor;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use backend::{Capabilities, ScoreRequest, ScorerBackend};
pub use cache::{cache_key, ScoreCache};
#[cfg(feature = "remote")]
pub use remote::{parse_response, RemoteBackend, RemoteConfig, RetryPolicy};
pub use synthetic::{SyntheticBackend, DEFAULT_SHARED_DIFFICULTY};
pub use tensor::{argmax, predict, PredictionMatrix, ScoreTensor};

use crate::catalog::{check_coverage, render, verbalize, Prompt, TaskSpec, UnlabeledExample};
use crate::error::{Error, Result};

/// How raw phrase scores become choice probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Log-softmax over the choice set.
    #[default]
    Softmax,
    /// Keep raw scores.
    None,
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Normalization::Softmax),
            "none" => Ok(Normalization::None),
            other => Err(Error::InvalidInput(format!(
                "unknown normalization `{other}` (expected softmax|none)"
            ))),
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Softmax => "softmax",
            Normalization::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScoringOptions {
    pub normalize: Normalization,
    /// Divide phrase scores by their whitespace token count.
    pub length_norm: bool,
    /// Worker cap; `None` uses the default pool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

struct Cell {
    request: ScoreRequest,
    keys: Vec<String>,
}

type CellOutcome = (usize, Result<Vec<f64>>);

/// Scores every (prompt, example, choice) triple.
///
/// Cached cells skip the backend; fresh cells are appended to the cache
/// before returning, even when other cells failed.
pub fn score_all<B: ScorerBackend + ?Sized>(
    task: &TaskSpec,
    prompts: &[Prompt],
    examples: &[UnlabeledExample],
    backend: &B,
    cache: Option<&ScoreCache>,
    options: &ScoringOptions,
) -> Result<ScoreTensor> {
    if prompts.is_empty() || examples.is_empty() {
        return Err(Error::InvalidInput("need at least one prompt and one example".into()));
    }
    for prompt in prompts {
        prompt.validate(task)?;
    }
    check_coverage(prompts, examples)?;

    let caps = backend.capabilities();
    let divide = options.length_norm && !caps.per_token;
    let model = backend.model_name().to_string();

    let mut cells = Vec::with_capacity(prompts.len() * examples.len());
    for prompt in prompts {
        for example in examples {
            let input = render(prompt, example)?;
            let candidates = task
                .choices
                .iter()
                .map(|label| verbalize(prompt, label).map(str::to_string))
                .collect::<Result<Vec<_>>>()?;
            let keys = candidates
                .iter()
                .map(|cand| cache_key(&model, &input, cand, options.length_norm))
                .collect();
            cells.push(Cell {
                request: ScoreRequest {
                    prompt_id: prompt.prompt_id.clone(),
                    example_id: example.example_id.clone(),
                    input,
                    candidates,
                    labels: task.choices.clone(),
                },
                keys,
            });
        }
    }

    let mut values: Vec<Option<Vec<f64>>> = cells
        .iter()
        .map(|cell| {
            let cache = cache?;
            cell.keys.iter().map(|key| cache.get(key)).collect()
        })
        .collect();

    let pending: Vec<usize> = (0..cells.len()).filter(|&idx| values[idx].is_none()).collect();
    let batches: Vec<&[usize]> = pending.chunks(caps.max_batch.max(1)).collect();
    let outcomes = run_batches(&batches, options.jobs, |batch| {
        score_cells(backend, &cells, batch, divide)
    })?;

    let mut fresh = Vec::new();
    let mut failed = Vec::new();
    let mut first_error = None;
    for (idx, outcome) in outcomes.into_iter().flatten() {
        match outcome {
            Ok(scores) => {
                fresh.extend(cells[idx].keys.iter().cloned().zip(scores.iter().copied()));
                values[idx] = Some(scores);
            }
            Err(e) => {
                let req = &cells[idx].request;
                failed.push((req.prompt_id.clone(), req.example_id.clone()));
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if let Some(cache) = cache {
        if !fresh.is_empty() {
            cache.insert_many(&fresh)?;
        }
    }
    if !failed.is_empty() {
        return Err(Error::Backend {
            failed,
            message: first_error.unwrap_or_default(),
        });
    }

    let flat: Vec<f64> = values
        .into_iter()
        .map(|v| v.ok_or_else(|| Error::Invariant("unscored cell after scoring".into())))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let raw = ScoreTensor::new(
        prompts.iter().map(|p| p.prompt_id.clone()).collect(),
        examples.iter().map(|e| e.example_id.clone()).collect(),
        task.choices.clone(),
        flat,
    )?;
    Ok(match options.normalize {
        Normalization::Softmax => raw.log_softmax(),
        Normalization::None => raw,
    })
}

/// Scores one batch; a failed batch is retried item by item so failures
/// can be pinned to exact cells.
fn score_cells<B: ScorerBackend + ?Sized>(
    backend: &B,
    cells: &[Cell],
    batch: &[usize],
    divide: bool,
) -> Vec<CellOutcome> {
    let requests: Vec<ScoreRequest> = batch.iter().map(|&idx| cells[idx].request.clone()).collect();
    match backend.score_batch(&requests) {
        Ok(scores) if scores.len() == batch.len() => batch
            .iter()
            .zip(scores)
            .map(|(&idx, s)| (idx, finish(&cells[idx].request, s, divide)))
            .collect(),
        first => {
            if batch.len() == 1 {
                let err = match first {
                    Err(e) => e,
                    Ok(scores) => Error::Protocol {
                        message: format!("backend returned {} results for 1 item", scores.len()),
                        excerpt: String::new(),
                    },
                };
                return vec![(batch[0], Err(err))];
            }
            batch
                .iter()
                .flat_map(|&idx| score_cells(backend, cells, &[idx], divide))
                .collect()
        }
    }
}

fn finish(request: &ScoreRequest, scores: Vec<f64>, divide: bool) -> Result<Vec<f64>> {
    if scores.len() != request.candidates.len() {
        return Err(Error::Protocol {
            message: format!("{} scores for {} candidates", scores.len(), request.candidates.len()),
            excerpt: format!("{scores:?}"),
        });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Protocol {
            message: "non-finite score".into(),
            excerpt: format!("{scores:?}"),
        });
    }
    Ok(if divide {
        scores
            .into_iter()
            .zip(&request.candidates)
            .map(|(s, cand)| s / cand.split_whitespace().count().max(1) as f64)
            .collect()
    } else {
        scores
    })
}

#[cfg(feature = "parallel")]
fn run_batches<F>(batches: &[&[usize]], jobs: Option<usize>, run: F) -> Result<Vec<Vec<CellOutcome>>>
where
    F: Fn(&[usize]) -> Vec<CellOutcome> + Sync,
{
    use rayon::prelude::*;
    let go = || batches.par_iter().map(|b| run(b)).collect();
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Invariant(e.to_string()))?;
            Ok(pool.install(go))
        }
        None => Ok(go()),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_batches<F>(batches: &[&[usize]], _jobs: Option<usize>, run: F) -> Result<Vec<Vec<CellOutcome>>>
where
    F: Fn(&[usize]) -> Vec<CellOutcome>,
{
    Ok(batches.iter().map(|b| run(b)).collect())
}
