use crate::catalog::LabelId;
use crate::error::Result;

/// What a backend can do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    /// Largest number of items accepted in one `score_batch` call.
    pub max_batch: usize,
    /// True if returned scores are already averaged per token.
    pub per_token: bool,
}

/// One rendered input and the verbalized phrases of every choice.
///
/// `prompt_id`, `example_id` and `labels` identify the cell; network
/// backends only send `input` and `candidates`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub prompt_id: String,
    pub example_id: String,
    pub input: String,
    pub candidates: Vec<String>,
    pub labels: Vec<LabelId>,
}

/// A frozen scorer returning one natural-log score per candidate phrase.
///
/// Implementations must be deterministic: the same request always yields
/// the same scores.
pub trait ScorerBackend: Send + Sync {
    fn model_name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    /// Scores every item; the outer result is aligned with `batch` and each
    /// inner vector with that item's candidates.
    fn score_batch(&self, batch: &[ScoreRequest]) -> Result<Vec<Vec<f64>>>;
}

impl<B: ScorerBackend + ?Sized> ScorerBackend for &B {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn score_batch(&self, batch: &[ScoreRequest]) -> Result<Vec<Vec<f64>>> {
        (**self).score_batch(batch)
    }
}

impl<B: ScorerBackend + ?Sized> ScorerBackend for Box<B> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }

    fn score_batch(&self, batch: &[ScoreRequest]) -> Result<Vec<Vec<f64>>> {
        (**self).score_batch(batch)
    }
}
