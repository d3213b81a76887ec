//! Uniform interface to completion models: live HTTP chat endpoints and
//! deterministic scripted doubles, plus the fine-tune-job abstraction.
//!
//! The pipeline never computes gradients; it exports data and registers
//! fine-tune jobs behind this interface. Scripted backends are pure
//! functions from prompt fingerprints to answers, which is what makes
//! oracle, flaky, and adversarial model behavior reproducible in tests.

pub mod http;
pub mod script_gen;
pub mod scripted;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stable identity of a prompt for scripted lookup and call logs.
///
/// `exact` covers the tables as arranged in this prompt; `invariant` is
/// unchanged under any row/column permutation of them. A script keyed on
/// `invariant` behaves like a permutation-consistent model, one keyed on
/// `exact` like a permutation-sensitive one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFingerprint {
    pub kind: String,
    pub exact: String,
    pub invariant: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl DecodeParams {
    /// Generation default: some temperature for diversity of brainstormed
    /// questions and errors.
    pub fn generation() -> DecodeParams {
        DecodeParams {
            temperature: 0.7,
            max_tokens: 1024,
            seed: None,
        }
    }

    /// Validation default: deterministic decoding.
    pub fn validation() -> DecodeParams {
        DecodeParams {
            temperature: 0.0,
            max_tokens: 1024,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatPrompt {
    pub system: String,
    pub user: String,
    pub decode: DecodeParams,
    pub fingerprint: PromptFingerprint,
}

/// Backend a model handle points at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Backend {
    Http {
        base_url: String,
        model_name: String,
        /// Name of the environment variable holding the bearer token.
        auth_env_var: String,
    },
    Scripted {
        script_path: PathBuf,
    },
}

/// Handle to one completion model version. `generation` 0 is the vanilla
/// base; each fine-tune registration advances the line by one (V1, V2, …)
/// even though every fine-tune re-bases on the vanilla weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRef {
    pub id: String,
    pub backend: Backend,
    pub generation: u32,
}

impl ModelRef {
    pub fn scripted(id: impl Into<String>, script_path: impl Into<PathBuf>) -> ModelRef {
        ModelRef {
            id: id.into(),
            backend: Backend::Scripted {
                script_path: script_path.into(),
            },
            generation: 0,
        }
    }

    pub fn http(
        id: impl Into<String>,
        base_url: impl Into<String>,
        model_name: impl Into<String>,
        auth_env_var: impl Into<String>,
    ) -> ModelRef {
        ModelRef {
            id: id.into(),
            backend: Backend::Http {
                base_url: base_url.into(),
                model_name: model_name.into(),
                auth_env_var: auth_env_var.into(),
            },
            generation: 0,
        }
    }

    /// Parse a CLI model spec: `scripted:<path>` or `http:<url>#<name>`.
    pub fn parse_spec(spec: &str, auth_env_var: &str) -> Result<ModelRef> {
        if let Some(path) = spec.strip_prefix("scripted:") {
            return Ok(ModelRef::scripted(format!("scripted:{path}"), path));
        }
        if let Some(rest) = spec.strip_prefix("http:") {
            let rest = rest.trim_start_matches("//");
            let (url, name) = rest.split_once('#').ok_or_else(|| {
                Error::Config(format!(
                    "http model spec needs '#<model-name>' after the url: {spec}"
                ))
            })?;
            let base_url = if url.starts_with("http") {
                url.to_string()
            } else {
                format!("http://{url}")
            };
            return Ok(ModelRef::http(
                format!("{name}@{base_url}"),
                base_url,
                name,
                auth_env_var,
            ));
        }
        Err(Error::Config(format!(
            "model spec must start with 'scripted:' or 'http:': {spec}"
        )))
    }
}

/// One completed (or failed) model call, for the run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallRecord {
    pub model_id: String,
    pub kind: String,
    pub exact: String,
    pub outcome: String,
    pub latency_ms: u64,
}

/// Retry policy for HTTP transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_backoff_ms: 250,
        }
    }
}

/// Shared entry point for all model I/O. Holds the scripted-file cache, the
/// HTTP client, the retry policy, and an append-only call log. Safe to call
/// from many threads; HTTP calls are additionally capped by a max-in-flight
/// limit, while scripted lookups run unthrottled.
pub struct ModelClient {
    retry: RetryPolicy,
    scripts: Mutex<BTreeMap<PathBuf, std::sync::Arc<scripted::Script>>>,
    http: http::HttpClient,
    log: Mutex<Vec<CallRecord>>,
    in_flight: Semaphore,
}

impl Default for ModelClient {
    fn default() -> Self {
        ModelClient::new(RetryPolicy::default())
    }
}

const DEFAULT_MAX_IN_FLIGHT: usize = 4;

impl ModelClient {
    pub fn new(retry: RetryPolicy) -> ModelClient {
        ModelClient::with_max_in_flight(retry, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_max_in_flight(retry: RetryPolicy, max_in_flight: usize) -> ModelClient {
        ModelClient {
            retry,
            scripts: Mutex::new(BTreeMap::new()),
            http: http::HttpClient::new(),
            log: Mutex::new(Vec::new()),
            in_flight: Semaphore::new(max_in_flight.max(1)),
        }
    }

    /// Raw model text for a prompt. Scripted backends answer from their
    /// fingerprint table and fail fast on a miss; HTTP backends retry
    /// transport failures with exponential backoff before giving up.
    pub fn complete(&self, model: &ModelRef, prompt: &ChatPrompt) -> Result<String> {
        let start = Instant::now();
        let result = match &model.backend {
            Backend::Scripted { script_path } => {
                let script = self.load_script(script_path)?;
                script.answer(&prompt.fingerprint)
            }
            Backend::Http {
                base_url,
                model_name,
                auth_env_var,
            } => {
                let _permit = self.in_flight.acquire();
                self.http
                    .chat(base_url, model_name, auth_env_var, prompt, self.retry)
            }
        };
        let record = CallRecord {
            model_id: model.id.clone(),
            kind: prompt.fingerprint.kind.clone(),
            exact: prompt.fingerprint.exact.clone(),
            outcome: match &result {
                Ok(_) => "ok".to_string(),
                Err(e) => format!("error: {e}"),
            },
            latency_ms: start.elapsed().as_millis() as u64,
        };
        self.log.lock().expect("call log lock").push(record);
        result
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().expect("call log lock").clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().expect("call log lock").len()
    }

    fn load_script(&self, path: &Path) -> Result<std::sync::Arc<scripted::Script>> {
        let mut cache = self.scripts.lock().expect("script cache lock");
        if let Some(s) = cache.get(path) {
            return Ok(s.clone());
        }
        let script = std::sync::Arc::new(scripted::Script::load(path)?);
        cache.insert(path.to_path_buf(), script.clone());
        Ok(script)
    }

    /// Submit a fine-tune job and resolve it to a terminal status.
    ///
    /// The training file must exist and be non-empty valid JSONL. In
    /// export-only mode the job succeeds immediately with the unchanged
    /// base model (training happens externally). Scripted backends succeed
    /// with a next-generation handle whose script may be swapped via the
    /// script file's `generation_scripts` map.
    pub fn submit_finetune(&self, job: FineTuneJob) -> Result<FineTuneJob> {
        validate_training_file(&job.training_file)?;
        let mut job = job;
        if job.export_only {
            job.status = FineTuneStatus::Succeeded {
                new_model: job.base.clone(),
            };
            return Ok(job);
        }
        match &job.base.backend {
            Backend::Scripted { script_path } => {
                let script = self.load_script(script_path)?;
                let next_path = script
                    .generation_script(job.new_generation)
                    .unwrap_or_else(|| script_path.clone());
                let new_model = ModelRef {
                    id: format!("{}-V{}", base_id(&job.base.id), job.new_generation),
                    backend: Backend::Scripted {
                        script_path: next_path,
                    },
                    generation: job.new_generation,
                };
                job.status = FineTuneStatus::Succeeded { new_model };
                Ok(job)
            }
            Backend::Http {
                base_url,
                model_name,
                auth_env_var,
            } => {
                match self.http.finetune(
                    base_url,
                    model_name,
                    auth_env_var,
                    &job.training_file,
                    &job.hyperparameters,
                    self.retry,
                ) {
                    Ok(new_name) => {
                        let new_model = ModelRef {
                            id: format!("{new_name}-V{}", job.new_generation),
                            backend: Backend::Http {
                                base_url: base_url.clone(),
                                model_name: new_name,
                                auth_env_var: auth_env_var.clone(),
                            },
                            generation: job.new_generation,
                        };
                        job.status = FineTuneStatus::Succeeded { new_model };
                        Ok(job)
                    }
                    Err(e) => {
                        job.status = FineTuneStatus::Failed {
                            reason: e.to_string(),
                        };
                        Ok(job)
                    }
                }
            }
        }
    }
}

fn base_id(id: &str) -> &str {
    match id.rfind("-V") {
        Some(pos) if id[pos + 2..].chars().all(|c| c.is_ascii_digit()) => &id[..pos],
        _ => id,
    }
}

/// Counting semaphore over Mutex + Condvar; permits release on drop.
struct Semaphore {
    state: Mutex<usize>,
    available: std::sync::Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Semaphore {
        Semaphore {
            state: Mutex::new(permits),
            available: std::sync::Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut count = self.state.lock().expect("semaphore lock");
        while *count == 0 {
            count = self.available.wait(count).expect("semaphore wait");
        }
        *count -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut count = self.0.state.lock().expect("semaphore lock");
        *count += 1;
        self.0.available.notify_one();
    }
}

fn validate_training_file(path: &Path) -> Result<()> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| Error::EmptyTrainingSet(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = 0usize;
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        serde_json::from_str::<serde_json::Value>(line).map_err(|e| {
            Error::EmptyTrainingSet(format!(
                "{} line {} is not valid JSON: {e}",
                path.display(),
                i + 1
            ))
        })?;
        lines += 1;
    }
    if lines == 0 {
        return Err(Error::EmptyTrainingSet(format!(
            "{} holds no training examples",
            path.display()
        )));
    }
    Ok(())
}

/// Hyperparameters echoed verbatim into fine-tune requests. The defaults
/// follow the training setup the pipeline was built around: learning-rate
/// multiplier 0.5 with a batch sized at 1% of the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneParams {
    pub lr_multiplier: f64,
    pub batch_fraction: f64,
    pub epochs: u32,
}

impl Default for FineTuneParams {
    fn default() -> Self {
        FineTuneParams {
            lr_multiplier: 0.5,
            batch_fraction: 0.01,
            epochs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FineTuneStatus {
    Pending,
    Running,
    Succeeded { new_model: ModelRef },
    Failed { reason: String },
}

/// A fine-tune registration. `base` is always the vanilla generation-0
/// model (each iteration re-bases on it rather than on the previous
/// checkpoint); `new_generation` is the version index the resulting model
/// takes (1 for V1, 2 for V2, …).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneJob {
    pub base: ModelRef,
    pub training_file: PathBuf,
    pub hyperparameters: FineTuneParams,
    pub new_generation: u32,
    pub export_only: bool,
    pub status: FineTuneStatus,
}

impl FineTuneJob {
    pub fn new(
        base: ModelRef,
        training_file: impl Into<PathBuf>,
        hyperparameters: FineTuneParams,
        new_generation: u32,
        export_only: bool,
    ) -> FineTuneJob {
        FineTuneJob {
            base,
            training_file: training_file.into(),
            hyperparameters,
            new_generation,
            export_only,
            status: FineTuneStatus::Pending,
        }
    }

    pub fn new_model(&self) -> Option<&ModelRef> {
        match &self.status {
            FineTuneStatus::Succeeded { new_model } => Some(new_model),
            _ => None,
        }
    }
}
