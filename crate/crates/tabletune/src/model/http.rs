//! HTTP backend speaking the generic chat-completions and fine-tuning
//! protocols.
//!
//! Chat: `POST {base_url}/chat/completions` with
//! `{model, messages, temperature, max_tokens, seed}`; the first choice's
//! message content is the completion. Fine-tune: `POST
//! {base_url}/fine_tuning/jobs`, then `GET` polling until a terminal
//! status. Auth is a bearer token read from the configured environment
//! variable. Transport and 5xx failures retry with exponential backoff.

use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{ChatPrompt, FineTuneParams, RetryPolicy};

pub struct HttpClient {
    client: reqwest::blocking::Client,
    /// Poll interval and budget for fine-tune status polling.
    poll_interval: Duration,
    poll_budget: Duration,
}

impl Default for HttpClient {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpClient {
    pub fn new() -> HttpClient {
        HttpClient {
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("reqwest client"),
            poll_interval: Duration::from_secs(2),
            poll_budget: Duration::from_secs(3600),
        }
    }

    fn bearer(&self, auth_env_var: &str) -> Option<String> {
        std::env::var(auth_env_var).ok().filter(|v| !v.is_empty())
    }

    pub fn chat(
        &self,
        base_url: &str,
        model_name: &str,
        auth_env_var: &str,
        prompt: &ChatPrompt,
        retry: RetryPolicy,
    ) -> Result<String> {
        let url = format!("{}/chat/completions", base_url.trim_end_matches('/'));
        let mut body = json!({
            "model": model_name,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": prompt.decode.temperature,
            "max_tokens": prompt.decode.max_tokens,
        });
        if let Some(seed) = prompt.decode.seed {
            body["seed"] = json!(seed);
        }
        let value = self.post_with_retry(&url, auth_env_var, &body, retry)?;
        let response: ChatResponse = serde_json::from_value(value)
            .map_err(|e| Error::Transport(format!("malformed chat response: {e}")))?;
        response
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::Transport("chat response had no choices".to_string()))
    }

    /// Submit a fine-tune job and poll to completion; returns the new model
    /// name reported by the server.
    pub fn finetune(
        &self,
        base_url: &str,
        model_name: &str,
        auth_env_var: &str,
        training_file: &Path,
        params: &FineTuneParams,
        retry: RetryPolicy,
    ) -> Result<String> {
        let url = format!("{}/fine_tuning/jobs", base_url.trim_end_matches('/'));
        let body = json!({
            "model": model_name,
            "training_file": training_file.to_string_lossy(),
            "hyperparameters": {
                "learning_rate_multiplier": params.lr_multiplier,
                "batch_size": params.batch_fraction,
                "n_epochs": params.epochs,
            }
        });
        let created = self.post_with_retry(&url, auth_env_var, &body, retry)?;
        let job: FineTuneResponse = serde_json::from_value(created)
            .map_err(|e| Error::Transport(format!("malformed fine-tune response: {e}")))?;
        let mut status = job.status;
        let mut fine_tuned_model = job.fine_tuned_model;
        let started = std::time::Instant::now();
        while !is_terminal(&status) {
            if started.elapsed() > self.poll_budget {
                return Err(Error::Transport("fine-tune polling timed out".to_string()));
            }
            std::thread::sleep(self.poll_interval);
            let polled = self.get_with_retry(
                &format!("{url}/{}", job.id),
                auth_env_var,
                retry,
            )?;
            let update: FineTuneResponse = serde_json::from_value(polled)
                .map_err(|e| Error::Transport(format!("malformed poll response: {e}")))?;
            status = update.status;
            fine_tuned_model = update.fine_tuned_model;
        }
        if status == "succeeded" {
            fine_tuned_model
                .ok_or_else(|| Error::Transport("job succeeded without a model name".to_string()))
        } else {
            Err(Error::Transport(format!("fine-tune job ended as {status}")))
        }
    }

    fn post_with_retry(
        &self,
        url: &str,
        auth_env_var: &str,
        body: &serde_json::Value,
        retry: RetryPolicy,
    ) -> Result<serde_json::Value> {
        self.with_retry(retry, || {
            let mut req = self.client.post(url).json(body);
            if let Some(token) = self.bearer(auth_env_var) {
                req = req.bearer_auth(token);
            }
            decode_response(req.send())
        })
    }

    fn get_with_retry(
        &self,
        url: &str,
        auth_env_var: &str,
        retry: RetryPolicy,
    ) -> Result<serde_json::Value> {
        self.with_retry(retry, || {
            let mut req = self.client.get(url);
            if let Some(token) = self.bearer(auth_env_var) {
                req = req.bearer_auth(token);
            }
            decode_response(req.send())
        })
    }

    fn with_retry<F>(&self, retry: RetryPolicy, mut call: F) -> Result<serde_json::Value>
    where
        F: FnMut() -> Result<serde_json::Value>,
    {
        let attempts = retry.attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    last = Some(e);
                    if attempt + 1 < attempts {
                        let backoff = retry.base_backoff_ms.saturating_mul(1 << attempt);
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                }
            }
        }
        Err(last.unwrap_or_else(|| Error::Transport("no attempts made".to_string())))
    }
}

fn decode_response(
    sent: std::result::Result<reqwest::blocking::Response, reqwest::Error>,
) -> Result<serde_json::Value> {
    let response = sent.map_err(|e| Error::Transport(format!("request failed: {e}")))?;
    let status = response.status();
    let text = response
        .text()
        .map_err(|e| Error::Transport(format!("cannot read body: {e}")))?;
    if !status.is_success() {
        return Err(Error::Transport(format!(
            "status {status}: {}",
            text.chars().take(200).collect::<String>()
        )));
    }
    serde_json::from_str(&text).map_err(|e| Error::Transport(format!("bad json body: {e}")))
}

fn is_terminal(status: &str) -> bool {
    matches!(status, "succeeded" | "failed" | "cancelled")
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    content: String,
}

#[derive(Debug, Deserialize)]
struct FineTuneResponse {
    #[serde(default)]
    id: String,
    status: String,
    #[serde(default)]
    fine_tuned_model: Option<String>,
}
