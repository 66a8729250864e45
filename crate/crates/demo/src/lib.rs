//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes a JSON string and returns a JSON string, so the page
//! needs no generated types. Errors surface as thrown strings.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;
use zps_core::eval::{compare_strategies, evaluate, simulate_robustness, Population, RobustnessSpec};
use zps_core::selection::{filter_prompts, two_means_threshold};
use zps_core::{predict, select, EnsembleStrategy, SelectionConfig};

type Outcome = Result<String, String>;

fn parse(input: &str) -> Result<Value, String> {
    serde_json::from_str(input).map_err(|e| format!("bad input: {e}"))
}

fn field<T: serde::de::DeserializeOwned>(v: &Value, key: &str, default: T) -> Result<T, String> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(x) => serde_json::from_value(x.clone()).map_err(|e| format!("`{key}`: {e}")),
    }
}

/// `[c_1, ..., c_p]` to the kept and discarded indices of the two-means split.
pub fn filter_scores_json(input: &str) -> Outcome {
    let scores: Vec<f64> =
        serde_json::from_value(parse(input)?).map_err(|e| format!("expected a number array: {e}"))?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err("scores must be finite".into());
    }
    let outcome = filter_prompts(&scores);
    Ok(json!({
        "kept": outcome.kept,
        "discarded": outcome.discarded,
        "threshold": outcome.threshold,
        "cluster_means": outcome.cluster_means,
        "split_exists": two_means_threshold(&scores).is_some(),
    })
    .to_string())
}

/// Selection on a synthetic population:
/// `{"qualities": {"id": q}, "n", "num_choices", "seed", "strategy", "filter", "shared_difficulty"}`.
pub fn run_selection_json(input: &str) -> Outcome {
    let v = parse(input)?;
    let qualities: Vec<(String, f64)> =
        field::<std::collections::BTreeMap<String, f64>>(&v, "qualities", Default::default())?
            .into_iter()
            .collect();
    if qualities.is_empty() {
        return Err("`qualities` needs at least one prompt".into());
    }
    let n: usize = field(&v, "n", 300)?;
    let num_choices: usize = field(&v, "num_choices", 2)?;
    let seed: u64 = field(&v, "seed", 1)?;
    let strategy: EnsembleStrategy = field(&v, "strategy", EnsembleStrategy::LogprobMean)?;
    let filter: bool = field(&v, "filter", true)?;
    let mut population = Population::new(&qualities, n, num_choices, seed).map_err(|e| e.to_string())?;
    if let Some(rho) = field::<Option<f64>>(&v, "shared_difficulty", None)? {
        population = population.with_shared_difficulty(rho).map_err(|e| e.to_string())?;
    }
    let tensor = population.tensor().map_err(|e| e.to_string())?;
    let config = SelectionConfig {
        strategy,
        filter,
        score_all_prompts: true,
    };
    let report = select(&tensor, &config).map_err(|e| e.to_string())?;
    let eval = evaluate(&predict(&tensor), &report, &population.gold_labels()).map_err(|e| e.to_string())?;
    Ok(json!({
        "qualities": qualities.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
        "selection": report,
        "evaluation": eval,
    })
    .to_string())
}

/// Adversarial-prompt robustness plus the ensemble comparison. Keys left
/// out of the input keep their default values.
pub fn run_robustness_json(input: &str) -> Outcome {
    let overrides = parse(input)?;
    let Value::Object(overrides) = overrides else {
        return Err("expected a JSON object".into());
    };
    let mut spec = serde_json::to_value(RobustnessSpec::default()).map_err(|e| e.to_string())?;
    for (k, val) in overrides {
        spec[k] = val;
    }
    let spec: RobustnessSpec = serde_json::from_value(spec).map_err(|e| format!("bad spec: {e}"))?;
    spec.validate().map_err(|e| e.to_string())?;
    let robustness = simulate_robustness(&spec).map_err(|e| e.to_string())?;
    let strategies = compare_strategies(&spec).map_err(|e| e.to_string())?;
    Ok(json!({
        "spec": spec,
        "robustness": robustness,
        "strategies": strategies,
        "text": format!("{}\n{}", robustness.to_text(), strategies.to_text()),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn filter_scores(input: &str) -> Result<String, JsValue> {
    filter_scores_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn run_selection(input: &str) -> Result<String, JsValue> {
    run_selection_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn run_robustness(input: &str) -> Result<String, JsValue> {
    run_robustness_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn default_spec() -> String {
    serde_json::to_string_pretty(&RobustnessSpec::default()).expect("spec serializes")
}
