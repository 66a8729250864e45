use std::collections::HashSet;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::catalog::LabelId;
use crate::error::{Error, Result};

/// Dense prompts × examples × choices array of natural-log scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    prompt_ids: Vec<String>,
    example_ids: Vec<String>,
    choices: Vec<LabelId>,
    logprobs: Vec<f64>,
}

impl ScoreTensor {
    /// `logprobs` is laid out prompt-major: `[(i * n + k) * c + j]`.
    pub fn new(
        prompt_ids: Vec<String>,
        example_ids: Vec<String>,
        choices: Vec<LabelId>,
        logprobs: Vec<f64>,
    ) -> Result<Self> {
        let (p, n, c) = (prompt_ids.len(), example_ids.len(), choices.len());
        if p == 0 || n == 0 || c == 0 {
            return Err(Error::InvalidInput(format!(
                "score tensor needs non-empty axes, got {p}x{n}x{c}"
            )));
        }
        if logprobs.len() != p * n * c {
            return Err(Error::InvalidInput(format!(
                "score tensor of shape {p}x{n}x{c} needs {} values, got {}",
                p * n * c,
                logprobs.len()
            )));
        }
        unique("prompt_id", &prompt_ids)?;
        unique("example_id", &example_ids)?;
        unique("choice", &choices)?;
        if let Some(pos) = logprobs.iter().position(|v| !v.is_finite()) {
            let (i, k, j) = (pos / (n * c), (pos / c) % n, pos % c);
            return Err(Error::InvalidInput(format!(
                "non-finite score at ({}, {}, {})",
                prompt_ids[i], example_ids[k], choices[j]
            )));
        }
        Ok(Self {
            prompt_ids,
            example_ids,
            choices,
            logprobs,
        })
    }

    pub fn from_nested(
        prompt_ids: Vec<String>,
        example_ids: Vec<String>,
        choices: Vec<LabelId>,
        nested: &[Vec<Vec<f64>>],
    ) -> Result<Self> {
        let n = example_ids.len();
        let c = choices.len();
        if nested.len() != prompt_ids.len()
            || nested
                .iter()
                .any(|row| row.len() != n || row.iter().any(|cell| cell.len() != c))
        {
            return Err(Error::InvalidInput("nested score array has a ragged shape".into()));
        }
        let flat = nested.iter().flatten().flatten().copied().collect();
        Self::new(prompt_ids, example_ids, choices, flat)
    }

    pub fn prompt_ids(&self) -> &[String] {
        &self.prompt_ids
    }

    pub fn example_ids(&self) -> &[String] {
        &self.example_ids
    }

    pub fn choices(&self) -> &[LabelId] {
        &self.choices
    }

    pub fn num_prompts(&self) -> usize {
        self.prompt_ids.len()
    }

    pub fn num_examples(&self) -> usize {
        self.example_ids.len()
    }

    pub fn num_choices(&self) -> usize {
        self.choices.len()
    }

    pub fn prompt_index(&self, prompt_id: &str) -> Option<usize> {
        self.prompt_ids.iter().position(|p| p == prompt_id)
    }

    /// Scores of every choice for prompt `i` on example `k`.
    pub fn cell(&self, i: usize, k: usize) -> &[f64] {
        let c = self.num_choices();
        let start = (i * self.num_examples() + k) * c;
        &self.logprobs[start..start + c]
    }

    pub fn logprob(&self, i: usize, k: usize, j: usize) -> f64 {
        self.cell(i, k)[j]
    }

    pub fn values(&self) -> &[f64] {
        &self.logprobs
    }

    /// Sub-tensor over the given prompt rows, in the given order.
    pub fn select_prompts(&self, rows: &[usize]) -> ScoreTensor {
        let per_prompt = self.num_examples() * self.num_choices();
        let mut logprobs = Vec::with_capacity(rows.len() * per_prompt);
        for &i in rows {
            logprobs.extend_from_slice(&self.logprobs[i * per_prompt..(i + 1) * per_prompt]);
        }
        ScoreTensor {
            prompt_ids: rows.iter().map(|&i| self.prompt_ids[i].clone()).collect(),
            example_ids: self.example_ids.clone(),
            choices: self.choices.clone(),
            logprobs,
        }
    }

    /// Sub-tensor over the given example columns, in the given order.
    pub fn select_examples(&self, cols: &[usize]) -> ScoreTensor {
        let mut logprobs = Vec::with_capacity(self.num_prompts() * cols.len() * self.num_choices());
        for i in 0..self.num_prompts() {
            for &k in cols {
                logprobs.extend_from_slice(self.cell(i, k));
            }
        }
        ScoreTensor {
            prompt_ids: self.prompt_ids.clone(),
            example_ids: cols.iter().map(|&k| self.example_ids[k].clone()).collect(),
            choices: self.choices.clone(),
            logprobs,
        }
    }

    /// Renormalizes every cell over the choice set (log-softmax).
    pub fn log_softmax(&self) -> ScoreTensor {
        let mut logprobs = self.logprobs.clone();
        for cell in logprobs.chunks_mut(self.num_choices()) {
            let max = cell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + cell.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in cell.iter_mut() {
                *v -= log_z;
            }
        }
        ScoreTensor {
            logprobs,
            ..self.clone()
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRepr {
    prompt_ids: Vec<String>,
    example_ids: Vec<String>,
    choices: Vec<LabelId>,
    logprobs: Vec<Vec<Vec<f64>>>,
}

impl Serialize for ScoreTensor {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let (p, n) = (self.num_prompts(), self.num_examples());
        let nested = (0..p)
            .map(|i| (0..n).map(|k| self.cell(i, k).to_vec()).collect())
            .collect();
        TensorRepr {
            prompt_ids: self.prompt_ids.clone(),
            example_ids: self.example_ids.clone(),
            choices: self.choices.clone(),
            logprobs: nested,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ScoreTensor {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = TensorRepr::deserialize(deserializer)?;
        ScoreTensor::from_nested(repr.prompt_ids, repr.example_ids, repr.choices, &repr.logprobs)
            .map_err(serde::de::Error::custom)
    }
}

/// Per-prompt argmax predictions, stored as choice indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionMatrix {
    prompt_ids: Vec<String>,
    example_ids: Vec<String>,
    choices: Vec<LabelId>,
    preds: Vec<usize>,
}

impl PredictionMatrix {
    pub fn new(
        prompt_ids: Vec<String>,
        example_ids: Vec<String>,
        choices: Vec<LabelId>,
        preds: Vec<usize>,
    ) -> Result<Self> {
        if preds.len() != prompt_ids.len() * example_ids.len() {
            return Err(Error::InvalidInput(format!(
                "prediction matrix of shape {}x{} got {} entries",
                prompt_ids.len(),
                example_ids.len(),
                preds.len()
            )));
        }
        if let Some(bad) = preds.iter().find(|&&j| j >= choices.len()) {
            return Err(Error::InvalidInput(format!("prediction index {bad} out of range")));
        }
        Ok(Self {
            prompt_ids,
            example_ids,
            choices,
            preds,
        })
    }

    pub fn prompt_ids(&self) -> &[String] {
        &self.prompt_ids
    }

    pub fn example_ids(&self) -> &[String] {
        &self.example_ids
    }

    pub fn choices(&self) -> &[LabelId] {
        &self.choices
    }

    pub fn num_prompts(&self) -> usize {
        self.prompt_ids.len()
    }

    pub fn num_examples(&self) -> usize {
        self.example_ids.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        let n = self.num_examples();
        &self.preds[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize, k: usize) -> usize {
        self.preds[i * self.num_examples() + k]
    }

    pub fn label(&self, i: usize, k: usize) -> &LabelId {
        &self.choices[self.get(i, k)]
    }

    pub fn prompt_index(&self, prompt_id: &str) -> Option<usize> {
        self.prompt_ids.iter().position(|p| p == prompt_id)
    }
}

#[derive(Serialize)]
struct PredictionRepr<'a> {
    prompt_ids: &'a [String],
    example_ids: &'a [String],
    preds: Vec<Vec<&'a LabelId>>,
}

impl Serialize for PredictionMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PredictionRepr {
            prompt_ids: &self.prompt_ids,
            example_ids: &self.example_ids,
            preds: (0..self.num_prompts())
                .map(|i| self.row(i).iter().map(|&j| &self.choices[j]).collect())
                .collect(),
        }
        .serialize(serializer)
    }
}

/// Index of the largest value; the earliest position wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// Rank classification: each prompt predicts its highest-scoring choice.
pub fn predict(tensor: &ScoreTensor) -> PredictionMatrix {
    let (p, n) = (tensor.num_prompts(), tensor.num_examples());
    let mut preds = Vec::with_capacity(p * n);
    for i in 0..p {
        for k in 0..n {
            preds.push(argmax(tensor.cell(i, k)));
        }
    }
    PredictionMatrix {
        prompt_ids: tensor.prompt_ids.clone(),
        example_ids: tensor.example_ids.clone(),
        choices: tensor.choices.clone(),
        preds,
    }
}

fn unique<T: std::hash::Hash + Eq + std::fmt::Display>(what: &str, items: &[T]) -> Result<()> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item) {
            return Err(Error::InvalidInput(format!("duplicate {what} `{item}`")));
        }
    }
    Ok(())
}
