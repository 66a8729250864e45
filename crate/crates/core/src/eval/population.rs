use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{LabelId, Prompt, TaskSpec, UnlabeledExample, Verbalizer};
use crate::error::Result;
use crate::scoring::{score_all, ScoreTensor, ScoringOptions, SyntheticBackend};

/// A synthetic task: prompts of known quality scored by the synthetic
/// backend against planted labels.
#[derive(Debug, Clone)]
pub struct Population {
    pub task: TaskSpec,
    pub prompts: Vec<Prompt>,
    pub examples: Vec<UnlabeledExample>,
    pub backend: SyntheticBackend,
    /// Planted label index per example.
    pub gold: Vec<usize>,
}

impl Population {
    pub fn new(qualities: &[(String, f64)], n: usize, num_choices: usize, seed: u64) -> Result<Self> {
        let choices: Vec<LabelId> = (0..num_choices).map(|j| LabelId(format!("c{j}"))).collect();
        let task = TaskSpec {
            task_id: "synthetic".into(),
            field_schema: vec!["text".into()],
            choices: choices.clone(),
            gold_label_field: None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..num_choices)).collect();
        let examples: Vec<UnlabeledExample> = gold
            .iter()
            .enumerate()
            .map(|(k, &g)| UnlabeledExample {
                example_id: format!("x{k:05}"),
                fields: [("text".to_string(), format!("example {k}"))].into(),
                gold_label: Some(choices[g].clone()),
            })
            .collect();
        let prompts = qualities
            .iter()
            .map(|(id, _)| {
                let verbalizer = Verbalizer::new(choices.iter().map(|c| (c.0.clone(), format!("{c} via {id}"))));
                Prompt::new(id, &format!("[{id}] {{{{text}}}}"), verbalizer)
            })
            .collect::<Result<Vec<_>>>()?;
        let planted: BTreeMap<String, LabelId> = examples
            .iter()
            .map(|e| (e.example_id.clone(), e.gold_label.clone().expect("planted")))
            .collect();
        let backend = SyntheticBackend::new(seed, qualities.iter().cloned().collect(), planted)?;
        Ok(Self {
            task,
            prompts,
            examples,
            backend,
            gold,
        })
    }

    /// Replaces the backend's shared-difficulty level.
    pub fn with_shared_difficulty(mut self, rho: f64) -> Result<Self> {
        self.backend = self.backend.with_shared_difficulty(rho)?;
        Ok(self)
    }

    pub fn tensor(&self) -> Result<ScoreTensor> {
        score_all(
            &self.task,
            &self.prompts,
            &self.examples,
            &self.backend,
            None,
            &ScoringOptions::default(),
        )
    }

    pub fn gold_labels(&self) -> Vec<Option<LabelId>> {
        self.examples.iter().map(|e| e.gold_label.clone()).collect()
    }
}
