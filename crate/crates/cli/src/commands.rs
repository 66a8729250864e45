use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::json;
use zps_core::eval::{compare_strategies, evaluate as evaluate_report, simulate_robustness, RobustnessSpec};
use zps_core::fewshot::{
    build_pseudo_val, parse_checkpoint_predictions, score_checkpoints, select_checkpoint as pick_checkpoint,
    top_confidence_pseudo_train, PseudoLabeledSet,
};
use zps_core::{predict, select as run_selection, Error, SelectionReport};

use crate::run::{emit_json, to_json, write_atomic, Run, RunConfig, RunMeta};
use crate::{CheckpointArgs, PseudoValArgs, RunArgs, ScoreArgs, SimulateArgs};

/// An output document: provenance first, then the payload's own fields.
#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    run: &'a RunMeta,
    #[serde(flatten)]
    body: &'a T,
}

fn summary(report: &SelectionReport) -> String {
    let mut out = format!(
        "selected: {}\nstrategy: {}, filter: {}\nkept {} of {} prompts",
        report.selected,
        report.strategy.as_str(),
        if report.filtered { "on" } else { "off" },
        report.confidence.kept.len(),
        report.confidence.scores.len(),
    );
    if !report.confidence.discarded.is_empty() {
        out.push_str(&format!(" (discarded: {})", report.confidence.discarded.join(", ")));
    }
    out.push('\n');
    for id in &report.ranking {
        out.push_str(&format!(
            "  {id}  pseudo_acc {:.4}  confidence {:.3}\n",
            report.pseudo_acc[id], report.confidence.scores[id]
        ));
    }
    out
}

pub fn select(args: &RunArgs) -> Result<()> {
    let run = Run::load("select", args)?;
    let tensor = run.tensor(args)?;
    let report = run_selection(&tensor, &run.selection)?;
    let meta = run.meta(args)?;
    emit_json(
        args.out.as_deref(),
        &Document {
            run: &meta,
            body: &report,
        },
    )?;
    print!("{}", summary(&report));
    Ok(())
}

pub fn evaluate(args: &RunArgs) -> Result<()> {
    let mut run = Run::load("evaluate", args)?;
    let field = run.task.gold_label_field.clone().ok_or_else(|| {
        Error::Validation("evaluate needs gold labels but the catalog sets no gold_label_field".into())
    })?;
    let missing: Vec<String> = run
        .examples
        .iter()
        .filter(|e| e.gold_label.is_none())
        .map(|e| e.example_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGold(missing))
            .with_context(|| format!("gold label field `{field}` is absent from {}", args.examples.display()));
    }
    // Every prompt needs a pseudo accuracy for the comparison table.
    run.selection.score_all_prompts = true;
    if let Some(selection) = run.config.selection.as_mut() {
        selection.score_all_prompts = true;
    }
    let tensor = run.tensor(args)?;
    let report = run_selection(&tensor, &run.selection)?;
    let gold: Vec<_> = run.examples.iter().map(|e| e.gold_label.clone()).collect();
    let eval = evaluate_report(&predict(&tensor), &report, &gold)?;
    let meta = run.meta(args)?;
    emit_json(
        args.out.as_deref(),
        &Document {
            run: &meta,
            body: &json!({ "selection": report, "evaluation": eval }),
        },
    )?;
    print!("{}", eval.to_text());
    Ok(())
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    if args.print_default_spec {
        print!("{}", to_json(&RobustnessSpec::default()));
        return Ok(());
    }
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(Error::Io)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<RobustnessSpec>(&text).map_err(|e| Error::Parse {
                context: path.display().to_string(),
                message: e.to_string(),
            })?
        }
        None => RobustnessSpec::default(),
    };
    if let Some(strategy) = args.strategy {
        spec.strategy = strategy;
    }
    if args.no_filter {
        spec.filter = false;
    }
    spec.validate()?;
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            bail!(Error::InvalidInput("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let robustness = simulate_robustness(&spec)?;
    let strategies = compare_strategies(&spec)?;

    let mut extra = BTreeMap::new();
    extra.insert("spec".to_string(), serde_json::to_value(&spec)?);
    let config = RunConfig {
        command: "simulate".into(),
        catalog: None,
        examples: None,
        backend: None,
        cache: None,
        scoring: None,
        selection: None,
        seed: spec.seeds.first().copied().unwrap_or(0),
        out: args.out.clone(),
        jobs: args.jobs,
        extra,
    };
    let inputs: Vec<&Path> = args.spec.iter().map(PathBuf::as_path).collect();
    let meta = RunMeta::new(config, &inputs)?;
    emit_json(
        args.out.as_deref(),
        &Document {
            run: &meta,
            body: &json!({ "robustness": robustness, "strategies": strategies }),
        },
    )?;
    print!("{}\n{}", robustness.to_text(), strategies.to_text());
    Ok(())
}

/// Writes a JSON Lines file plus a `<out>.meta.json` provenance sidecar.
fn write_jsonl_with_meta(out: &Path, lines: &str, meta: &RunMeta) -> Result<PathBuf> {
    let mut sidecar = out.as_os_str().to_owned();
    sidecar.push(".meta.json");
    let sidecar = PathBuf::from(sidecar);
    write_atomic(out, lines.as_bytes())?;
    write_atomic(&sidecar, to_json(&json!({ "run": meta })).as_bytes())?;
    Ok(sidecar)
}

pub fn pseudo_val(args: &PseudoValArgs) -> Result<()> {
    let mut run = Run::load("pseudo-val", &args.run)?;
    if let Some(size) = args.size {
        run.config.extra.insert("size".into(), json!(size));
    }
    if let Some(k) = args.top_k {
        run.config.extra.insert("top_k".into(), json!(k));
    }
    let tensor = run.tensor(&args.run)?;
    let set: PseudoLabeledSet = match args.top_k {
        Some(k) => top_confidence_pseudo_train(&tensor, &run.selection, k)?,
        None => build_pseudo_val(&tensor, &run.selection, args.size)?,
    };
    let meta = run.meta(&args.run)?;
    match &args.run.out {
        Some(out) => {
            let sidecar = write_jsonl_with_meta(out, &set.to_jsonl(), &meta)?;
            println!(
                "wrote {} pseudo-labeled examples to {} ({}), provenance in {}",
                set.len(),
                out.display(),
                set.provenance,
                sidecar.display()
            );
        }
        None => print!("{}", set.to_jsonl()),
    }
    Ok(())
}

pub fn select_checkpoint(args: &CheckpointArgs) -> Result<()> {
    let read = |path: &Path| {
        fs::read_to_string(path)
            .map_err(Error::Io)
            .with_context(|| format!("reading {}", path.display()))
    };
    let checkpoints = parse_checkpoint_predictions(&read(&args.predictions)?)
        .with_context(|| format!("predictions {}", args.predictions.display()))?;
    let pseudo_val = PseudoLabeledSet::from_jsonl(&read(&args.pseudo_val)?, "file")
        .with_context(|| format!("pseudo-val {}", args.pseudo_val.display()))?;
    let scores = score_checkpoints(&checkpoints, &pseudo_val)?;
    let selected = pick_checkpoint(&checkpoints, &pseudo_val)?;

    let mut extra = BTreeMap::new();
    extra.insert("predictions".to_string(), json!(args.predictions));
    extra.insert("pseudo_val".to_string(), json!(args.pseudo_val));
    let config = RunConfig {
        command: "select-checkpoint".into(),
        catalog: None,
        examples: None,
        backend: None,
        cache: None,
        scoring: None,
        selection: None,
        seed: 0,
        out: args.out.clone(),
        jobs: None,
        extra,
    };
    let meta = RunMeta::new(config, &[&args.predictions, &args.pseudo_val])?;
    let scores_json: Vec<_> = scores
        .iter()
        .map(|(id, agreement)| json!({ "checkpoint_id": id, "agreement": agreement }))
        .collect();
    emit_json(
        args.out.as_deref(),
        &Document {
            run: &meta,
            body: &json!({ "scores": scores_json, "selected": selected }),
        },
    )?;
    for (id, agreement) in &scores {
        println!("  {id}  agreement {agreement:.4}");
    }
    println!("selected: {selected}");
    Ok(())
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let run = Run::load("score", &args.run)?;
    let tensor = run.tensor(&args.run)?;
    let meta = run.meta(&args.run)?;
    emit_json(
        args.run.out.as_deref(),
        &Document {
            run: &meta,
            body: &json!({ "tensor": tensor }),
        },
    )?;
    println!(
        "scored {} prompts x {} examples x {} choices",
        tensor.num_prompts(),
        tensor.num_examples(),
        tensor.num_choices()
    );
    Ok(())
}
