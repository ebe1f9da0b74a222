//! Model invocation: a remote chat-completion client, a scripted backend for
//! offline runs, a replay backend, and token accounting.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agents::{PromptBundle, Role};

/// Environment variable holding the remote API credential.
pub const API_KEY_ENV: &str = "TRACECODER_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub bundle: PromptBundle,
    pub response_text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub model_name: String,
    /// True when token counts are length-based estimates, not provider usage.
    #[serde(default)]
    pub estimated: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("missing credential: set {API_KEY_ENV}")]
    MissingCredential,
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("scripted responses for role {0} exhausted")]
    Exhausted(Role),
    #[error("remote call failed after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("remote rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed remote reply: {0}")]
    BadReply(String),
    #[error("cannot read script {path}: {message}")]
    Script { path: String, message: String },
}

pub trait Backend: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<ChatExchange, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, bundle: &PromptBundle) -> Result<ChatExchange, BackendError> {
        (**self).complete(bundle)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, bundle: &PromptBundle) -> Result<ChatExchange, BackendError> {
        (**self).complete(bundle)
    }
}

/// Roughly four characters per token.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

pub type RoleQueues = BTreeMap<Role, Vec<String>>;

/// Response file for scripted runs. Per-task queues take precedence over the
/// shared `responses` queues, so concurrent sessions stay independent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendScript {
    #[serde(default = "default_true")]
    pub strict: bool,
    #[serde(default)]
    pub responses: RoleQueues,
    #[serde(default)]
    pub tasks: BTreeMap<String, RoleQueues>,
}

fn default_true() -> bool {
    true
}

impl BackendScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let err = |message: String| BackendError::Script {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }

    pub fn backend_for(&self, task_id: &str) -> ScriptedBackend {
        let queues = self.tasks.get(task_id).unwrap_or(&self.responses);
        ScriptedBackend::new(queues.clone(), self.strict)
    }
}

/// Pending responses and the last one served, per role.
type Queues = HashMap<Role, (VecDeque<String>, Option<String>)>;

/// Canned responses popped FIFO per role.
///
/// In lenient mode an exhausted queue keeps returning its last response.
#[derive(Debug)]
pub struct ScriptedBackend {
    queues: Mutex<Queues>,
    strict: bool,
}

pub const SCRIPTED_MODEL: &str = "scripted";

impl ScriptedBackend {
    pub fn new(queues: RoleQueues, strict: bool) -> Self {
        let queues = queues
            .into_iter()
            .map(|(role, q)| (role, (q.into_iter().collect(), None)))
            .collect();
        Self {
            queues: Mutex::new(queues),
            strict,
        }
    }

    pub fn strict() -> Self {
        Self::new(RoleQueues::new(), true)
    }

    pub fn push(&self, role: Role, response: impl Into<String>) -> &Self {
        self.queues
            .lock()
            .expect("queue lock")
            .entry(role)
            .or_default()
            .0
            .push_back(response.into());
        self
    }

    pub fn remaining(&self, role: Role) -> usize {
        self.queues
            .lock()
            .expect("queue lock")
            .get(&role)
            .map_or(0, |(q, _)| q.len())
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, bundle: &PromptBundle) -> Result<ChatExchange, BackendError> {
        let response = {
            let mut queues = self.queues.lock().expect("queue lock");
            let (queue, last) = queues.entry(bundle.role).or_default();
            match queue.pop_front() {
                Some(r) => {
                    *last = Some(r.clone());
                    r
                }
                None if !self.strict && last.is_some() => last.clone().expect("checked"),
                None => return Err(BackendError::Exhausted(bundle.role)),
            }
        };
        Ok(ChatExchange {
            bundle: bundle.clone(),
            prompt_tokens: estimate_tokens(&bundle.system_text) + estimate_tokens(&bundle.user_text),
            completion_tokens: estimate_tokens(&response),
            response_text: response,
            latency_ms: 0,
            model_name: SCRIPTED_MODEL.to_string(),
            estimated: true,
        })
    }
}

/// Returns recorded exchanges per role in order, with the live prompt attached.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    queues: Mutex<HashMap<Role, VecDeque<ChatExchange>>>,
}

impl ReplayBackend {
    pub fn new(exchanges: impl IntoIterator<Item = ChatExchange>) -> Self {
        let mut queues: HashMap<Role, VecDeque<ChatExchange>> = HashMap::new();
        for ex in exchanges {
            queues.entry(ex.bundle.role).or_default().push_back(ex);
        }
        Self {
            queues: Mutex::new(queues),
        }
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, bundle: &PromptBundle) -> Result<ChatExchange, BackendError> {
        let mut queues = self.queues.lock().expect("queue lock");
        let mut ex = queues
            .get_mut(&bundle.role)
            .and_then(VecDeque::pop_front)
            .ok_or(BackendError::Exhausted(bundle.role))?;
        ex.bundle = bundle.clone();
        Ok(ex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
}

/// Backend configuration file. The credential never appears here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub backend: BackendKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<String>,
}

fn default_retries() -> u32 {
    3
}

impl BackendConfig {
    pub fn scripted(script_path: impl Into<String>) -> Self {
        Self {
            backend: BackendKind::Scripted,
            endpoint: String::new(),
            model: SCRIPTED_MODEL.into(),
            temperature: 0.0,
            max_retries: default_retries(),
            script_path: Some(script_path.into()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }
}

/// Hands each session its backend: a fresh scripted backend per task, or a
/// shared remote client.
#[derive(Debug, Clone)]
pub enum BackendSource {
    Http(Arc<HttpBackend>),
    Scripted(Arc<BackendScript>),
}

impl BackendSource {
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        match config.backend {
            BackendKind::Scripted => {
                let path = config
                    .script_path
                    .as_deref()
                    .ok_or_else(|| BackendError::Config("scripted backend needs script_path".into()))?;
                Ok(Self::Scripted(Arc::new(BackendScript::load(path)?)))
            }
            BackendKind::Http => {
                let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
                Ok(Self::Http(Arc::new(HttpBackend::new(config, key)?)))
            }
        }
    }

    pub fn for_task(&self, task_id: &str) -> Box<dyn Backend> {
        match self {
            Self::Http(h) => Box::new(Arc::clone(h)),
            Self::Scripted(s) => Box::new(s.backend_for(task_id)),
        }
    }
}

/// Chat-completion client (`messages` in, `choices[0].message.content` and
/// `usage` out). Transport failures, 429 and 5xx are retried with
/// exponential backoff.
#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    model: String,
    temperature: f64,
    max_retries: u32,
    api_key: String,
    backoff: Duration,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        let api_key = api_key.ok_or(BackendError::MissingCredential)?;
        if config.endpoint.is_empty() {
            return Err(BackendError::Config("http backend needs an endpoint".into()));
        }
        if config.model.is_empty() {
            return Err(BackendError::Config("http backend needs a model".into()));
        }
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Ok(Self {
            endpoint: config.endpoint.clone(),
            model: config.model.clone(),
            temperature: config.temperature,
            max_retries: config.max_retries,
            api_key,
            backoff: Duration::from_millis(500),
            agent,
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn request_body(&self, bundle: &PromptBundle) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
        })
    }

    fn parse_reply(&self, bundle: &PromptBundle, reply: &Value, latency_ms: u64) -> Result<ChatExchange, BackendError> {
        let text = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::BadReply("missing choices[0].message.content".into()))?
            .to_string();
        let usage = |key: &str| reply.get("usage").and_then(|u| u.get(key)).and_then(Value::as_u64);
        let (prompt_tokens, completion_tokens, estimated) =
            match (usage("prompt_tokens"), usage("completion_tokens")) {
                (Some(p), Some(c)) => (p, c, false),
                _ => (
                    estimate_tokens(&bundle.system_text) + estimate_tokens(&bundle.user_text),
                    estimate_tokens(&text),
                    true,
                ),
            };
        let model_name = reply
            .get("model")
            .and_then(Value::as_str)
            .unwrap_or(&self.model)
            .to_string();
        Ok(ChatExchange {
            bundle: bundle.clone(),
            response_text: text,
            prompt_tokens,
            completion_tokens,
            latency_ms,
            model_name,
            estimated,
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, bundle: &PromptBundle) -> Result<ChatExchange, BackendError> {
        let body = self.request_body(bundle);
        let attempts = self.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            let started = Instant::now();
            let result = self
                .agent
                .post(&self.endpoint)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(&body);
            let mut response = match result {
                Ok(r) => r,
                Err(e) => {
                    last_error = e.to_string();
                    continue;
                }
            };
            let status = response.status().as_u16();
            if status == 429 || status >= 500 {
                last_error = format!("status {status}");
                continue;
            }
            let text = response
                .body_mut()
                .read_to_string()
                .map_err(|e| BackendError::BadReply(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(BackendError::Rejected { status, body: text });
            }
            let reply: Value = serde_json::from_str(&text).map_err(|e| BackendError::BadReply(e.to_string()))?;
            return self.parse_reply(bundle, &reply, started.elapsed().as_millis() as u64);
        }
        Err(BackendError::RetriesExhausted { attempts, last_error })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageSummary {
    pub problem_count: usize,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    /// Per-problem averages, rounded half-up to two decimals.
    pub avg_prompt_tokens: f64,
    pub avg_completion_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("problem count must be at least 1")]
pub struct ZeroProblems;

/// `numerator / denominator` rounded half-up to two decimals.
pub(crate) fn round_ratio_2dp(numerator: u64, denominator: u64) -> f64 {
    let hundredths = (numerator as u128 * 200 + denominator as u128) / (2 * denominator as u128);
    hundredths as f64 / 100.0
}

pub fn aggregate_usage<'a>(
    exchanges: impl IntoIterator<Item = &'a ChatExchange>,
    problem_count: usize,
) -> Result<UsageSummary, ZeroProblems> {
    if problem_count == 0 {
        return Err(ZeroProblems);
    }
    let (prompt, completion) = exchanges
        .into_iter()
        .fold((0u64, 0u64), |(p, c), ex| (p + ex.prompt_tokens, c + ex.completion_tokens));
    Ok(UsageSummary {
        problem_count,
        total_prompt_tokens: prompt,
        total_completion_tokens: completion,
        avg_prompt_tokens: round_ratio_2dp(prompt, problem_count as u64),
        avg_completion_tokens: round_ratio_2dp(completion, problem_count as u64),
    })
}
