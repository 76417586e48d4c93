use std::time::Duration;

use serde_json::{json, Value as Json};

use super::prompts::{self, Prompt, Task};
use super::transport::{HttpTransport, Transport};
use super::{
    Classification, Meter, Oracle, OracleError, PromptTemplates, RowRequest, RowResponse, Taxonomy,
};
use crate::model::RowView;

/// Settings for a chat-completion backend. Holds the *name* of the
/// environment variable carrying the token, never the token itself.
#[derive(Debug, Clone)]
pub struct LlmConfig {
    pub endpoint: String,
    pub path: String,
    pub model: String,
    pub token_env: Option<String>,
    pub templates: PromptTemplates,
    /// Backend-specific wrapper around every system prompt; `{PROMPT}`
    /// marks where the prompt goes.
    pub system_wrapper: Option<String>,
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl LlmConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, templates: PromptTemplates) -> Self {
        Self {
            endpoint: endpoint.into(),
            path: "/v1/chat/completions".into(),
            model: model.into(),
            token_env: None,
            templates,
            system_wrapper: None,
            max_retries: 3,
            backoff: Duration::from_secs(1),
            timeout: Duration::from_secs(60),
        }
    }
}

pub struct LlmOracle {
    config: LlmConfig,
    transport: Box<dyn Transport>,
    meter: Meter,
}

impl std::fmt::Debug for LlmOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmOracle")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

impl LlmOracle {
    pub fn new(config: LlmConfig) -> Self {
        let transport = HttpTransport::new(
            config.endpoint.clone(),
            config.token_env.clone(),
            config.timeout,
        );
        Self::with_transport(config, Box::new(transport))
    }

    pub fn with_transport(config: LlmConfig, transport: Box<dyn Transport>) -> Self {
        Self {
            config,
            transport,
            meter: Meter::default(),
        }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// The exact request body sent for `prompt`.
    pub fn request_body(&self, prompt: &Prompt) -> Json {
        let system = match &self.config.system_wrapper {
            Some(w) => prompts::fill(w, &[("PROMPT", &prompt.system)]),
            None => prompt.system.clone(),
        };
        json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": prompt.user},
            ],
        })
    }

    /// Send one prompt, retrying transport failures with exponential
    /// backoff. Malformed replies are returned as protocol errors at once.
    fn chat(&self, prompt: &Prompt, rows: u64) -> Result<String, OracleError> {
        let body = self.request_body(prompt);
        self.meter.record(rows, prompt.len() as u64);
        let mut attempt = 0u32;
        let response = loop {
            match self.transport.post(&self.config.path, &body) {
                Ok(r) => break r,
                Err(e) if attempt < self.config.max_retries => {
                    let delay = self.config.backoff.saturating_mul(1 << attempt);
                    log::warn!("oracle request failed ({e}); retrying in {delay:?}");
                    self.meter.record_retry();
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => {
                    return Err(OracleError::Transport {
                        attempts: attempt + 1,
                        message: e.to_string(),
                    })
                }
            }
        };
        response["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| OracleError::Protocol("response has no choices[0].message.content".into()))
    }

    /// The prompt a row request turns into. Single-part requests use the
    /// dataset templates; anything else is sent as a numbered task list.
    pub fn row_prompt(&self, row_text: &str, request: &RowRequest<'_>) -> Prompt {
        let t = &self.config.templates;
        let parts = request.judge.is_some() as usize
            + request.classify.len()
            + (!request.extract.is_empty()) as usize;
        if parts == 1 {
            if let Some(cond) = request.judge {
                return t.judge(&cond.text(), row_text);
            }
            if let Some(tax) = request.classify.first() {
                return t.classify(tax, row_text);
            }
            return t.extract(&request.extract, row_text);
        }
        let cond_text = request.judge.map(|c| c.text());
        prompts::fused(t, &tasks(request, cond_text.as_deref()), row_text)
    }
}

fn tasks<'a>(request: &'a RowRequest<'a>, cond_text: Option<&'a str>) -> Vec<Task<'a>> {
    let mut out = Vec::new();
    if let Some(c) = cond_text {
        out.push(Task::Judge(c));
    }
    out.extend(request.classify.iter().map(|t| Task::Classify(t)));
    if !request.extract.is_empty() {
        out.push(Task::Extract(&request.extract));
    }
    out
}

fn classification(reply: &str, taxonomy: &Taxonomy) -> Result<Classification, OracleError> {
    let indices = prompts::parse_indices(reply, taxonomy.len())?;
    Ok(Classification {
        indices,
        unmapped: false,
    })
}

impl Oracle for LlmOracle {
    fn call(&self, row: RowView<'_>, request: &RowRequest<'_>) -> Result<RowResponse, OracleError> {
        if request.is_empty() {
            return Ok(RowResponse::default());
        }
        let row_text = row.text_of(&request.sources);
        let prompt = self.row_prompt(&row_text, request);
        let reply = self.chat(&prompt, 1)?;
        let fused = request.judge.is_some() as usize
            + request.classify.len()
            + (!request.extract.is_empty()) as usize
            > 1;
        if !fused {
            let mut out = RowResponse::default();
            if request.judge.is_some() {
                out.verdict = Some(prompts::parse_verdict(&reply)?);
            } else if let Some(tax) = request.classify.first() {
                out.classes.push(classification(&reply, tax)?);
            } else {
                out.extracted = prompts::parse_extracted(&reply, request.extract.len())?;
            }
            return Ok(out);
        }

        let cond_text = request.judge.map(|c| c.text());
        let tasks = tasks(request, cond_text.as_deref());
        let answers = prompts::split_tasks(&reply, tasks.len())?;
        let mut out = RowResponse::default();
        for (task, lines) in tasks.iter().zip(answers) {
            match task {
                Task::Extract(attrs) => {
                    if lines.len() != attrs.len() {
                        return Err(OracleError::Protocol(format!(
                            "expected {} extracted lines, got {}",
                            attrs.len(),
                            lines.len()
                        )));
                    }
                    out.extracted = lines;
                }
                _ => {
                    let [line] = lines.as_slice() else {
                        return Err(OracleError::Protocol(format!(
                            "expected one answer line per task, got {}",
                            lines.len()
                        )));
                    };
                    match task {
                        Task::Judge(_) => out.verdict = Some(prompts::parse_verdict(line)?),
                        Task::Classify(tax) => out.classes.push(classification(line, tax)?),
                        Task::Extract(_) => unreachable!(),
                    }
                }
            }
        }
        Ok(out)
    }

    fn build_taxonomy(
        &self,
        rows: &[RowView<'_>],
        attribute: &str,
        sources: &[String],
        max_groups: usize,
    ) -> Result<Taxonomy, OracleError> {
        if rows.is_empty() {
            return Err(OracleError::EmptySample);
        }
        let texts: Vec<String> = rows.iter().map(|r| r.text_of(sources)).collect();
        let prompt = self.config.templates.taxonomy(attribute, &texts);
        let reply = self.chat(&prompt, rows.len() as u64)?;
        prompts::parse_taxonomy(&reply, attribute, max_groups)
    }

    fn meter(&self) -> &Meter {
        &self.meter
    }
}
