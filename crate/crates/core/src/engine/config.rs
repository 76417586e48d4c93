use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::embedding::{EmbeddingProvider, HashingProvider, HttpEmbeddingProvider};
use crate::exec::ExecSettings;
use crate::compiler::CostParams;
use crate::learner::DEFAULT_LAMBDA;
use crate::oracle::{
    HttpTransport, LlmConfig, LlmOracle, MockOracle, Oracle, PromptTemplates, RecordedTransport,
    TemplatePreset,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}line {line}: {message}", .file.as_ref().map(|f| format!("{f}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub file: Option<String>,
    pub line: usize,
    pub message: String,
}

/// How the mock oracle maps semantic atoms and attributes onto hidden
/// label columns. Loaded from the JSON file named by `mock.bindings`.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockBindings {
    pub label_column: String,
    /// Atom text to the label value that makes it hold.
    #[serde(default)]
    pub bind: BTreeMap<String, String>,
    /// Atom text to a `[column, value]` pair.
    #[serde(default)]
    pub bind_column: BTreeMap<String, (String, String)>,
    /// Abstract attribute to the column answering it.
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default)]
    pub strict: bool,
}

impl MockBindings {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn build(&self) -> MockOracle {
        let mut m = MockOracle::new(self.label_column.clone());
        for (atom, value) in &self.bind {
            m = m.bind(atom.clone(), value.clone());
        }
        for (atom, (column, value)) in &self.bind_column {
            m = m.bind_column(atom.clone(), column.clone(), value.clone());
        }
        for (attr, column) in &self.attributes {
            m = m.attribute(attr.clone(), column.clone());
        }
        if self.strict {
            m = m.strict();
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockSpec {
    pub bindings: MockBindings,
    pub error_rate: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmSpec {
    pub endpoint: String,
    pub path: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub preset: TemplatePreset,
    pub system_wrapper: Option<String>,
    pub max_retries: u32,
    pub timeout_secs: u64,
    /// Serve replies from a recording instead of the network.
    pub recorded: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleSpec {
    Mock(MockSpec),
    Llm(LlmSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSpec {
    Hashing { dim: usize },
    Http {
        endpoint: String,
        model: String,
        token_env: Option<String>,
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub oracle: OracleSpec,
    pub embedding: EmbeddingSpec,
    /// Clusters for stratified sampling.
    pub k: usize,
    pub aggregation_budget: usize,
    pub retrieval_budget: usize,
    pub taxonomy_budget: usize,
    pub batch_size: usize,
    pub parallelism: usize,
    pub seed: u64,
    pub cache_dir: PathBuf,
    pub max_groups: usize,
    pub exploration: f64,
    pub lambda: f64,
    pub prior_selectivity: f64,
    /// Unstructured columns shown to the oracle; inferred when unset.
    pub sources: Option<Vec<String>>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            oracle: OracleSpec::Mock(MockSpec {
                bindings: MockBindings {
                    label_column: "label".into(),
                    ..MockBindings::default()
                },
                error_rate: 0.0,
                noise_seed: 0,
            }),
            embedding: EmbeddingSpec::Hashing { dim: 256 },
            k: 10,
            aggregation_budget: 128,
            retrieval_budget: 256,
            taxonomy_budget: 16,
            batch_size: 16,
            parallelism: 8,
            seed: 0,
            cache_dir: PathBuf::from(".uqe"),
            max_groups: 32,
            exploration: 0.0,
            lambda: DEFAULT_LAMBDA,
            prior_selectivity: 0.5,
            sources: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value `{value}` for `{key}` ({e})"))
}

fn non_empty(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_string())
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            file: Some(path.display().to_string()),
            line: 0,
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| ConfigError {
            file: Some(path.display().to_string()),
            ..e
        })
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment;
    /// relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut oracle_kind = "mock".to_string();
        let mut mock = MockSpec {
            bindings: MockBindings {
                label_column: "label".into(),
                ..MockBindings::default()
            },
            error_rate: 0.0,
            noise_seed: 0,
        };
        let mut llm = LlmSpec {
            endpoint: "http://localhost:8000".into(),
            path: "/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            token_env: Some("UQE_API_TOKEN".into()),
            preset: TemplatePreset::Generic,
            system_wrapper: None,
            max_retries: 3,
            timeout_secs: 60,
            recorded: None,
        };
        let mut emb_kind = "hashing".to_string();
        let mut emb_dim = 256usize;
        let mut emb_endpoint = "http://localhost:8000".to_string();
        let mut emb_model = "text-embedding-3-small".to_string();
        let mut emb_token: Option<String> = Some("UQE_API_TOKEN".into());

        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError {
                file: None,
                line: n + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            let path = |v: &str| base.join(v);
            let result: Result<(), String> = (|| {
                match key {
                    "oracle" => match value {
                        "mock" | "llm" => oracle_kind = value.to_string(),
                        other => return Err(format!("unknown oracle `{other}` (mock, llm)")),
                    },
                    "mock.bindings" => mock.bindings = MockBindings::load(&path(value))?,
                    "mock.label_column" => mock.bindings.label_column = value.to_string(),
                    "mock.strict" => mock.bindings.strict = parse_num::<bool>(key, value)?,
                    "mock.error_rate" => {
                        let r: f64 = parse_num(key, value)?;
                        if !(0.0..=1.0).contains(&r) {
                            return Err(format!("`{key}` must lie in [0, 1], got {r}"));
                        }
                        mock.error_rate = r;
                    }
                    "mock.noise_seed" => mock.noise_seed = parse_num(key, value)?,
                    "llm.endpoint" => llm.endpoint = value.to_string(),
                    "llm.path" => llm.path = value.to_string(),
                    "llm.model" => llm.model = value.to_string(),
                    "llm.token_env" => llm.token_env = non_empty(value),
                    "llm.preset" => llm.preset = value.parse()?,
                    "llm.system_wrapper" => llm.system_wrapper = non_empty(&value.replace("\\n", "\n")),
                    "llm.max_retries" => llm.max_retries = parse_num(key, value)?,
                    "llm.timeout_secs" => llm.timeout_secs = parse_num(key, value)?,
                    "llm.recorded" => llm.recorded = Some(path(value)),
                    "embedding" => match value {
                        "hashing" | "http" => emb_kind = value.to_string(),
                        other => return Err(format!("unknown embedding provider `{other}` (hashing, http)")),
                    },
                    "embedding.dim" => emb_dim = parse_num(key, value)?,
                    "embedding.endpoint" => emb_endpoint = value.to_string(),
                    "embedding.model" => emb_model = value.to_string(),
                    "embedding.token_env" => emb_token = non_empty(value),
                    "k" => cfg.k = parse_num(key, value)?,
                    "aggregation_budget" => cfg.aggregation_budget = parse_num(key, value)?,
                    "retrieval_budget" => cfg.retrieval_budget = parse_num(key, value)?,
                    "taxonomy_budget" => cfg.taxonomy_budget = parse_num(key, value)?,
                    "batch_size" => cfg.batch_size = parse_num(key, value)?,
                    "parallelism" => cfg.parallelism = parse_num(key, value)?,
                    "seed" => cfg.seed = parse_num(key, value)?,
                    "cache_dir" => cfg.cache_dir = path(value),
                    "max_groups" => cfg.max_groups = parse_num(key, value)?,
                    "exploration" => cfg.exploration = parse_num(key, value)?,
                    "lambda" => cfg.lambda = parse_num(key, value)?,
                    "prior_selectivity" => cfg.prior_selectivity = parse_num(key, value)?,
                    "sources" => {
                        cfg.sources = Some(
                            value
                                .split(',')
                                .map(|s| s.trim().to_string())
                                .filter(|s| !s.is_empty())
                                .collect(),
                        )
                    }
                    other => return Err(format!("unknown key `{other}`")),
                }
                Ok(())
            })();
            result.map_err(err)?;
        }
        cfg.oracle = match oracle_kind.as_str() {
            "llm" => OracleSpec::Llm(llm),
            _ => OracleSpec::Mock(mock),
        };
        cfg.embedding = match emb_kind.as_str() {
            "http" => EmbeddingSpec::Http {
                endpoint: emb_endpoint,
                model: emb_model,
                token_env: emb_token,
                dim: emb_dim,
            },
            _ => EmbeddingSpec::Hashing { dim: emb_dim },
        };
        cfg.validate().map_err(|message| ConfigError {
            file: None,
            line: 0,
            message,
        })?;
        Ok(cfg)
    }

    /// Budgets and counts must be positive, rates in range.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("k", self.k),
            ("aggregation_budget", self.aggregation_budget),
            ("retrieval_budget", self.retrieval_budget),
            ("taxonomy_budget", self.taxonomy_budget),
            ("batch_size", self.batch_size),
            ("parallelism", self.parallelism),
            ("max_groups", self.max_groups),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("`{name}` must be positive"));
            }
        }
        if !(self.prior_selectivity > 0.0 && self.prior_selectivity <= 1.0) {
            return Err("`prior_selectivity` must lie in (0, 1]".into());
        }
        if !(self.exploration >= 0.0 && self.exploration.is_finite()) {
            return Err("`exploration` must be a nonnegative number".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err("`lambda` must be a nonnegative number".into());
        }
        let (EmbeddingSpec::Hashing { dim } | EmbeddingSpec::Http { dim, .. }) = self.embedding;
        if dim < 2 {
            return Err("`embedding.dim` must be at least 2".into());
        }
        Ok(())
    }

    pub fn exec_settings(&self) -> ExecSettings {
        ExecSettings {
            aggregation_budget: self.aggregation_budget,
            retrieval_budget: self.retrieval_budget,
            taxonomy_budget: self.taxonomy_budget,
            max_groups: self.max_groups,
            batch_size: self.batch_size,
            parallelism: self.parallelism,
            seed: self.seed,
            exploration: self.exploration,
            lambda: self.lambda,
        }
    }

    pub fn cost_params(&self) -> CostParams {
        CostParams {
            aggregation_budget: self.aggregation_budget,
            retrieval_budget: self.retrieval_budget,
            taxonomy_budget: self.taxonomy_budget,
            prior_selectivity: self.prior_selectivity,
        }
    }

    /// Prompt templates when the oracle is a chat backend.
    pub fn templates(&self) -> Option<PromptTemplates> {
        match &self.oracle {
            OracleSpec::Llm(l) => Some(PromptTemplates::preset(l.preset)),
            OracleSpec::Mock(_) => None,
        }
    }

    pub fn build_oracle(&self) -> Result<Box<dyn Oracle>, String> {
        Ok(match &self.oracle {
            OracleSpec::Mock(m) => {
                Box::new(m.bindings.build().with_error_rate(m.error_rate, m.noise_seed))
            }
            OracleSpec::Llm(l) => {
                let mut config = LlmConfig::new(
                    l.endpoint.clone(),
                    l.model.clone(),
                    PromptTemplates::preset(l.preset),
                );
                config.path = l.path.clone();
                config.token_env = l.token_env.clone();
                config.system_wrapper = l.system_wrapper.clone();
                config.max_retries = l.max_retries;
                config.timeout = Duration::from_secs(l.timeout_secs);
                match &l.recorded {
                    Some(p) => {
                        let t = RecordedTransport::from_file(p)
                            .map_err(|e| format!("{}: {e}", p.display()))?;
                        config.backoff = Duration::ZERO;
                        Box::new(LlmOracle::with_transport(config, Box::new(t)))
                    }
                    None => Box::new(LlmOracle::new(config)),
                }
            }
        })
    }

    pub fn build_embedder(&self) -> Box<dyn EmbeddingProvider> {
        match &self.embedding {
            EmbeddingSpec::Hashing { dim } => Box::new(HashingProvider::new(*dim)),
            EmbeddingSpec::Http {
                endpoint,
                model,
                token_env,
                dim,
            } => {
                let t = HttpTransport::new(endpoint.clone(), token_env.clone(), Duration::from_secs(60));
                Box::new(HttpEmbeddingProvider::new(Box::new(t), model.clone(), *dim))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = EngineConfig::default();
        assert_eq!(
            (c.k, c.aggregation_budget, c.retrieval_budget, c.taxonomy_budget, c.batch_size, c.parallelism),
            (10, 128, 256, 16, 16, 8)
        );
    }

    #[test]
    fn parses_keys_and_comments() {
        let c = EngineConfig::parse(
            "# budgets\naggregation_budget = 64\nseed=7 # trailing\nsources = review, title\nmock.error_rate = 0.1\n",
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.aggregation_budget, 64);
        assert_eq!(c.seed, 7);
        assert_eq!(c.sources, Some(vec!["review".to_string(), "title".to_string()]));
        assert!(matches!(c.oracle, OracleSpec::Mock(MockSpec { error_rate, .. }) if error_rate == 0.1));
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = EngineConfig::parse("k = 3\n\nbudget = 4\n", Path::new(".")).unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("unknown key `budget`"));
    }

    #[test]
    fn zero_budget_is_rejected() {
        let e = EngineConfig::parse("retrieval_budget = 0", Path::new(".")).unwrap_err();
        assert!(e.message.contains("retrieval_budget"));
    }

    #[test]
    fn llm_backend_is_selected() {
        let c = EngineConfig::parse("oracle = llm\nllm.preset = imdb\nllm.token_env = MY_TOKEN", Path::new(".")).unwrap();
        match c.oracle {
            OracleSpec::Llm(l) => {
                assert_eq!(l.preset, TemplatePreset::Imdb);
                assert_eq!(l.token_env.as_deref(), Some("MY_TOKEN"));
            }
            _ => panic!("expected llm"),
        }
    }
}
