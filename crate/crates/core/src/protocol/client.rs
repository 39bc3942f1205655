use std::time::Duration;

use super::messages::{decode, encode, Message};
use super::{
    BackendError, EditorBackend, EditorRequest, EditorResponse, PolicyBackend, PolicyRequest,
    PolicyResponse, ScorerBackend, ScorerRequest, ScorerResponse, TerminatorBackend,
    TerminatorRequest, TerminatorResponse, EDITOR_PATH, ENV_TIMEOUT_SECS, POLICY_PATH,
    PROTOCOL_HEADER, PROTOCOL_VERSION, SCORER_PATH, TERMINATOR_PATH,
};

pub const DEFAULT_TIMEOUT_SECS: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    /// Scheme, host and port, e.g. `http://127.0.0.1:8080`. A trailing slash is
    /// ignored.
    pub base_url: String,
    pub timeout: Duration,
    pub bearer_token: Option<String>,
}

impl ClientConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs_f64(DEFAULT_TIMEOUT_SECS),
            bearer_token: None,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_bearer(mut self, token: impl Into<String>) -> Self {
        self.bearer_token = Some(token.into());
        self
    }

    /// Reads the base URL from `url_var` and the timeout from
    /// `MIRA_TIMEOUT_SECS`. Returns `None` when the URL variable is unset or
    /// empty.
    pub fn from_env(url_var: &str) -> Option<Self> {
        let url = std::env::var(url_var).ok().filter(|u| !u.trim().is_empty())?;
        let mut config = Self::new(url);
        if let Some(secs) = std::env::var(ENV_TIMEOUT_SECS)
            .ok()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s > 0.0)
        {
            config.timeout = Duration::from_secs_f64(secs);
        }
        Some(config)
    }
}

/// A remote backend reached over the JSON wire protocol. One value can serve
/// as any of the four backend kinds; each trait method posts to its own path.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: ClientConfig,
    id: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: ClientConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Connection(e.to_string()))?;
        Ok(Self {
            id: format!("http:{}", config.base_url),
            config,
            client,
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn call<Req: Message, Resp: Message>(&self, path: &str, req: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.config.base_url, path);
        let mut builder = self
            .client
            .post(&url)
            .header(PROTOCOL_HEADER, PROTOCOL_VERSION)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(encode(req));
        if let Some(token) = &self.config.bearer_token {
            builder = builder.bearer_auth(token);
        }
        let response = builder.send().map_err(|e| map_transport(&url, e))?;
        let version = response
            .headers()
            .get(PROTOCOL_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        if version.as_deref() != Some(PROTOCOL_VERSION) {
            return Err(BackendError::ProtocolVersion { found: version });
        }
        let status = response.status();
        let body = response.bytes().map_err(|e| map_transport(&url, e))?;
        if !status.is_success() {
            return Err(BackendError::remote(status.as_u16(), error_message(&body)));
        }
        decode(&body)
    }
}

fn map_transport(url: &str, e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout(format!("{url}: {e}"))
    } else {
        BackendError::Connection(format!("{url}: {e}"))
    }
}

fn error_message(body: &[u8]) -> String {
    serde_json::from_slice::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
        .unwrap_or_else(|| String::from_utf8_lossy(body).into_owned())
}

impl PolicyBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }
    fn step(&self, req: &PolicyRequest) -> Result<PolicyResponse, BackendError> {
        self.call(POLICY_PATH, req)
    }
}

impl EditorBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }
    fn apply(&self, req: &EditorRequest) -> Result<EditorResponse, BackendError> {
        self.call(EDITOR_PATH, req)
    }
}

impl TerminatorBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }
    fn decide(&self, req: &TerminatorRequest) -> Result<TerminatorResponse, BackendError> {
        self.call(TERMINATOR_PATH, req)
    }
}

impl ScorerBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }
    fn score(&self, req: &ScorerRequest) -> Result<ScorerResponse, BackendError> {
        self.call(SCORER_PATH, req)
    }
}
