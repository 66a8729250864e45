use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use zps_core::catalog::{load_catalog, load_examples, LabelId, Prompt, TaskSpec, UnlabeledExample};
use zps_core::scoring::{
    score_all, Normalization, RemoteBackend, RemoteConfig, ScoreCache, ScorerBackend, ScoringOptions, SyntheticBackend,
};
use zps_core::{Error, ScoreTensor, SelectionConfig};

use crate::{BackendKind, RunArgs, Switch};

pub const TOKEN_ENV: &str = "ZPS_API_TOKEN";

/// Everything needed to reproduce a run, with secrets redacted.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub examples: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scoring: Option<ScoringOptions>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionConfig>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Remote {
        endpoint: String,
        model: String,
        max_batch: usize,
        /// Whether a token was supplied; its value is never recorded.
        api_token: Option<&'static str>,
    },
    Synthetic {
        default_quality: f64,
        quality: BTreeMap<String, f64>,
        shared_difficulty: f64,
    },
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance block embedded in every output.
#[derive(Debug, Serialize)]
pub struct RunMeta {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: RunConfig,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    /// Digest over the per-input digests, in order.
    pub input_sha256: String,
}

impl RunMeta {
    pub fn new(config: RunConfig, inputs: &[&Path]) -> Result<Self> {
        let mut digests = Vec::new();
        let mut combined = Sha256::new();
        for path in inputs {
            let bytes = fs::read(path)
                .map_err(Error::Io)
                .with_context(|| format!("reading {}", path.display()))?;
            let sha = hex(&Sha256::digest(&bytes));
            combined.update(sha.as_bytes());
            digests.push(InputDigest {
                path: path.to_path_buf(),
                sha256: sha,
            });
        }
        Ok(Self {
            tool: "zps",
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed,
            config,
            inputs: digests,
            input_sha256: hex(&combined.finalize()),
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes to a temporary sibling and renames it into place, so a failed
/// run never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .with_context(|| format!("output path {} has no file name", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents)?;
        file.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::Io(e)).with_context(|| format!("writing {}", path.display()));
    }
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

/// Writes `value` to `--out` when given.
pub fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    if let Some(path) = out {
        write_atomic(path, to_json(value).as_bytes())?;
    }
    Ok(())
}

/// A loaded task plus everything derived from the shared flags.
pub struct Run {
    pub task: TaskSpec,
    pub prompts: Vec<Prompt>,
    pub examples: Vec<UnlabeledExample>,
    pub scoring: ScoringOptions,
    pub selection: SelectionConfig,
    pub config: RunConfig,
    backend: Box<dyn ScorerBackend>,
}

impl Run {
    pub fn load(command: &str, args: &RunArgs) -> Result<Self> {
        let (task, prompts) =
            load_catalog(&args.catalog).with_context(|| format!("catalog {}", args.catalog.display()))?;
        let examples =
            load_examples(&args.examples, &task).with_context(|| format!("examples {}", args.examples.display()))?;
        if examples.is_empty() {
            bail!(Error::Validation(format!(
                "{} holds no examples",
                args.examples.display()
            )));
        }
        let normalize: Normalization = args.normalize.parse()?;
        if args.jobs == Some(0) {
            bail!(Error::InvalidInput("--jobs must be at least 1".into()));
        }
        let scoring = ScoringOptions {
            normalize,
            length_norm: args.length_norm == Switch::On,
            jobs: args.jobs,
        };
        let selection = SelectionConfig {
            strategy: args.strategy,
            filter: !args.no_filter,
            score_all_prompts: args.score_all_prompts,
        };
        let (backend, backend_config) = build_backend(args, &task, &prompts, &examples)?;
        let config = RunConfig {
            command: command.into(),
            catalog: Some(args.catalog.clone()),
            examples: Some(args.examples.clone()),
            backend: Some(backend_config),
            cache: args.cache.clone(),
            scoring: Some(scoring),
            selection: Some(selection),
            seed: args.seed,
            out: args.out.clone(),
            jobs: args.jobs,
            extra: BTreeMap::new(),
        };
        Ok(Self {
            task,
            prompts,
            examples,
            scoring,
            selection,
            config,
            backend,
        })
    }

    pub fn meta(&self, args: &RunArgs) -> Result<RunMeta> {
        RunMeta::new(self.config.clone(), &[&args.catalog, &args.examples])
    }

    pub fn tensor(&self, args: &RunArgs) -> Result<ScoreTensor> {
        let cache = match &args.cache {
            Some(path) => {
                if args.reset_cache {
                    ScoreCache::reset(path)?;
                }
                Some(ScoreCache::open(path)?)
            }
            None if args.reset_cache => bail!(Error::InvalidInput("--reset-cache needs --cache".into())),
            None => None,
        };
        let tensor = score_all(
            &self.task,
            &self.prompts,
            &self.examples,
            self.backend.as_ref(),
            cache.as_ref(),
            &self.scoring,
        )?;
        if let Some(cache) = &cache {
            log::info!("score cache {} holds {} entries", cache.path().display(), cache.len());
        }
        Ok(tensor)
    }
}

fn build_backend(
    args: &RunArgs,
    task: &TaskSpec,
    prompts: &[Prompt],
    examples: &[UnlabeledExample],
) -> Result<(Box<dyn ScorerBackend>, BackendConfig)> {
    match args.backend {
        BackendKind::Remote => {
            let endpoint = args
                .endpoint
                .clone()
                .ok_or_else(|| Error::InvalidInput("--backend remote needs --endpoint".into()))?;
            let model = args
                .model
                .clone()
                .ok_or_else(|| Error::InvalidInput("--backend remote needs --model".into()))?;
            if args.max_batch == 0 {
                bail!(Error::InvalidInput("--max-batch must be at least 1".into()));
            }
            let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
            let mut config = RemoteConfig::new(endpoint.clone(), model.clone());
            config.max_batch = args.max_batch;
            let redacted = token.as_ref().map(|_| "<redacted>");
            config.token = token;
            let backend = RemoteBackend::new(config)?;
            Ok((
                Box::new(backend),
                BackendConfig::Remote {
                    endpoint,
                    model,
                    max_batch: args.max_batch,
                    api_token: redacted,
                },
            ))
        }
        BackendKind::Synthetic => {
            let mut quality: BTreeMap<String, f64> = prompts
                .iter()
                .map(|p| (p.prompt_id.clone(), args.default_quality))
                .collect();
            for entry in &args.qualities {
                let (id, q) = entry
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidInput(format!("--quality `{entry}` is not ID=Q")))?;
                let q: f64 = q
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("--quality `{entry}`: `{q}` is not a number")))?;
                if !quality.contains_key(id) {
                    bail!(Error::InvalidInput(format!("--quality names unknown prompt `{id}`")));
                }
                quality.insert(id.to_string(), q);
            }
            let planted: BTreeMap<String, LabelId> = examples
                .iter()
                .map(|e| {
                    let label = e
                        .gold_label
                        .clone()
                        .unwrap_or_else(|| hashed_label(args.seed, &e.example_id, &task.choices));
                    (e.example_id.clone(), label)
                })
                .collect();
            let mut backend = SyntheticBackend::new(args.seed, quality.clone(), planted)?;
            if let Some(rho) = args.shared_difficulty {
                backend = backend.with_shared_difficulty(rho)?;
            }
            let shared_difficulty = backend.shared_difficulty();
            Ok((
                Box::new(backend),
                BackendConfig::Synthetic {
                    default_quality: args.default_quality,
                    quality,
                    shared_difficulty,
                },
            ))
        }
    }
}

/// Planted label for an example that has no gold label.
fn hashed_label(seed: u64, example_id: &str, choices: &[LabelId]) -> LabelId {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(example_id.as_bytes())
        .finalize();
    let n = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    choices[(n % choices.len() as u64) as usize].clone()
}
