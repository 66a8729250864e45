//! Prompt selection without gold labels.
//!
//! Given candidate prompts for a task, unlabeled examples and a frozen
//! scorer, pick the prompt that agrees best with a pseudo-labeling prompt
//! ensemble, without touching a single gold label.
//!
//! * [`catalog`]: tasks, templates, verbalizers and their file formats.
//! * [`scoring`]: the score tensor, scorer backends and the score cache.
//! * [`selection`]: confidence filtering, ensembles and prompt selection.
//! * [`fewshot`]: pseudo-validation sets and checkpoint selection.
//! * [`eval`]: post-hoc evaluation and synthetic-population experiments.

pub mod catalog;
pub mod error;
pub mod eval;
pub mod fewshot;
pub mod scoring;
pub mod selection;

pub use catalog::{LabelId, Prompt, TaskSpec, UnlabeledExample};
pub use error::{Error, ErrorKind, Result};
pub use scoring::{predict, PredictionMatrix, ScoreTensor, ScorerBackend};
pub use selection::{select, EnsembleStrategy, SelectionConfig, SelectionReport};
