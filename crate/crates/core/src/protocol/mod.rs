//! Backend contracts (policy, editor, terminator, scorer), the HTTP wire
//! protocol that carries them, and in-process mock backends.
//!
//! Endpoints, all `POST` with JSON bodies and an `X-Mira-Protocol: 1` header:
//!
//! | backend    | path                    | request / response                            |
//! |------------|-------------------------|-----------------------------------------------|
//! | policy     | `/v1/policy/step`       | [`PolicyRequest`] / [`PolicyResponse`]         |
//! | editor     | `/v1/editor/apply`      | [`EditorRequest`] / [`EditorResponse`]         |
//! | terminator | `/v1/terminator/decide` | [`TerminatorRequest`] / [`TerminatorResponse`] |
//! | scorer     | `/v1/scorer/score`      | [`ScorerRequest`] / [`ScorerResponse`]         |

mod client;
mod messages;
pub mod mock;
mod schema;
mod server;

use std::sync::Arc;

pub use client::{ClientConfig, HttpBackend, DEFAULT_TIMEOUT_SECS};
pub use messages::{
    decode, encode, Decision, EditorRequest, EditorResponse, ImagePayload, Message, PolicyRequest,
    PolicyResponse, ScorerRequest, ScorerResponse, TerminatorRequest, TerminatorResponse,
};
pub use schema::{validate_message, validate_value, SchemaId, UnknownSchema, MAX_PAYLOAD_BYTES};
pub use server::{serve, ServerConfig, ServerHandle};

use crate::model::Violation;

pub const PROTOCOL_HEADER: &str = "X-Mira-Protocol";
pub const PROTOCOL_VERSION: &str = "1";

pub const POLICY_PATH: &str = "/v1/policy/step";
pub const EDITOR_PATH: &str = "/v1/editor/apply";
pub const TERMINATOR_PATH: &str = "/v1/terminator/decide";
pub const SCORER_PATH: &str = "/v1/scorer/score";
pub const HEALTH_PATH: &str = "/v1/health";

pub const ENV_POLICY_URL: &str = "MIRA_POLICY_URL";
pub const ENV_EDITOR_URL: &str = "MIRA_EDITOR_URL";
pub const ENV_TERMINATOR_URL: &str = "MIRA_TERMINATOR_URL";
pub const ENV_SCORER_URL: &str = "MIRA_SCORER_URL";
pub const ENV_TIMEOUT_SECS: &str = "MIRA_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("malformed message: {}", fmt_violations(.0))]
    Malformed(Vec<Violation>),
    #[error("remote error {status}: {message}")]
    Remote { status: u16, message: String },
    #[error("protocol version mismatch: peer sent {found:?}, expected {PROTOCOL_VERSION}")]
    ProtocolVersion { found: Option<String> },
    #[error("scripted policy exhausted after {calls} calls")]
    ScriptUnderflow { calls: usize },
}

fn fmt_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl BackendError {
    /// Whether re-sending the same request may succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout(_) | BackendError::Connection(_) => true,
            BackendError::Remote { status, .. } => *status >= 500,
            _ => false,
        }
    }

    pub fn remote(status: u16, message: impl Into<String>) -> Self {
        BackendError::Remote {
            status,
            message: message.into(),
        }
    }
}

/// Predicts the next atomic instruction from (current, original, instruction).
pub trait PolicyBackend: Send + Sync {
    fn id(&self) -> &str;
    fn step(&self, req: &PolicyRequest) -> Result<PolicyResponse, BackendError>;
    /// Latency to record instead of wall-clock time, for simulated backends.
    fn synthetic_latency(&self) -> Option<f64> {
        None
    }
}

/// Executes one atomic instruction on an image.
pub trait EditorBackend: Send + Sync {
    fn id(&self) -> &str;
    fn apply(&self, req: &EditorRequest) -> Result<EditorResponse, BackendError>;
    fn synthetic_latency(&self) -> Option<f64> {
        None
    }
}

/// Decides whether the episode is complete.
pub trait TerminatorBackend: Send + Sync {
    fn id(&self) -> &str;
    fn decide(&self, req: &TerminatorRequest) -> Result<TerminatorResponse, BackendError>;
    fn synthetic_latency(&self) -> Option<f64> {
        None
    }
}

/// Scores an edit on the 0-10 scale.
pub trait ScorerBackend: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, req: &ScorerRequest) -> Result<ScorerResponse, BackendError>;
}

macro_rules! forward_arc {
    ($tr:ident, $method:ident, $req:ty, $resp:ty) => {
        impl<T: $tr + ?Sized> $tr for Arc<T> {
            fn id(&self) -> &str {
                (**self).id()
            }
            fn $method(&self, req: &$req) -> Result<$resp, BackendError> {
                (**self).$method(req)
            }
            fn synthetic_latency(&self) -> Option<f64> {
                (**self).synthetic_latency()
            }
        }
    };
}

forward_arc!(PolicyBackend, step, PolicyRequest, PolicyResponse);
forward_arc!(EditorBackend, apply, EditorRequest, EditorResponse);
forward_arc!(TerminatorBackend, decide, TerminatorRequest, TerminatorResponse);

impl<T: ScorerBackend + ?Sized> ScorerBackend for Arc<T> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn score(&self, req: &ScorerRequest) -> Result<ScorerResponse, BackendError> {
        (**self).score(req)
    }
}
