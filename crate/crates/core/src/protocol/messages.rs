use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::schema::{validate_message, SchemaId};
use super::BackendError;
use crate::model::{ActionKind, ContentHash, Image, MediaKind, ModelError, ScoreTriple};

const B64: base64::engine::GeneralPurpose = base64::engine::general_purpose::STANDARD;

/// Image on the wire: inline base64 bytes, or a content-hash reference for
/// backends that share the blob store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub media_kind: MediaKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ContentHash>,
}

impl ImagePayload {
    pub fn inline(image: &Image) -> Self {
        Self {
            media_kind: image.reference().media_kind,
            data: Some(B64.encode(image.bytes())),
            reference: None,
        }
    }

    pub fn by_ref(image: &Image) -> Self {
        Self {
            media_kind: image.reference().media_kind,
            data: None,
            reference: Some(image.hash()),
        }
    }

    /// Decodes an inline payload. Reference-only payloads cannot be resolved
    /// here.
    pub fn to_image(&self) -> Result<Image, ModelError> {
        let data = self.data.as_deref().ok_or_else(|| {
            ModelError::MalformedImage("payload is a reference; inline data required".into())
        })?;
        let bytes = B64
            .decode(data)
            .map_err(|e| ModelError::MalformedImage(format!("bad base64: {e}")))?;
        Image::with_kind(bytes, self.media_kind)
    }
}

/// Typed wire message with a known schema.
pub trait Message: Serialize + DeserializeOwned {
    const SCHEMA: SchemaId;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub original_image: ImagePayload,
    pub current_image: ImagePayload,
    pub instruction: String,
    /// Prior atomic instruction texts, oldest first. Empty unless history
    /// forwarding is enabled.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyResponse {
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

impl PolicyResponse {
    pub fn edit(text: impl Into<String>) -> Self {
        Self {
            action: ActionKind::Edit,
            instruction_text: Some(text.into()),
            reasoning: None,
        }
    }

    pub fn stop() -> Self {
        Self {
            action: ActionKind::Stop,
            instruction_text: None,
            reasoning: None,
        }
    }

    pub fn with_reasoning(mut self, reasoning: impl Into<String>) -> Self {
        self.reasoning = Some(reasoning.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditorRequest {
    pub image: ImagePayload,
    pub instruction_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditorResponse {
    pub image: ImagePayload,
    pub width: u32,
    pub height: u32,
}

impl EditorResponse {
    pub fn from_image(image: &Image) -> Self {
        Self {
            image: ImagePayload::inline(image),
            width: image.reference().width,
            height: image.reference().height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminatorRequest {
    pub current_image: ImagePayload,
    pub original_image: ImagePayload,
    pub instruction: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminatorResponse {
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerRequest {
    pub source_image: ImagePayload,
    pub edited_image: ImagePayload,
    pub instruction_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerResponse {
    #[serde(flatten)]
    pub scores: ScoreTriple,
}

impl Message for PolicyRequest {
    const SCHEMA: SchemaId = SchemaId::PolicyRequest;
}
impl Message for PolicyResponse {
    const SCHEMA: SchemaId = SchemaId::PolicyResponse;
}
impl Message for EditorRequest {
    const SCHEMA: SchemaId = SchemaId::EditorRequest;
}
impl Message for EditorResponse {
    const SCHEMA: SchemaId = SchemaId::EditorResponse;
}
impl Message for TerminatorRequest {
    const SCHEMA: SchemaId = SchemaId::TerminatorRequest;
}
impl Message for TerminatorResponse {
    const SCHEMA: SchemaId = SchemaId::TerminatorResponse;
}
impl Message for ScorerRequest {
    const SCHEMA: SchemaId = SchemaId::ScorerRequest;
}
impl Message for ScorerResponse {
    const SCHEMA: SchemaId = SchemaId::ScorerResponse;
}

pub fn encode<M: Message>(msg: &M) -> Vec<u8> {
    serde_json::to_vec(msg).expect("wire messages serialize")
}

/// Validates against the message schema, then deserializes.
pub fn decode<M: Message>(raw: &[u8]) -> Result<M, BackendError> {
    validate_message(raw, M::SCHEMA).map_err(BackendError::Malformed)?;
    serde_json::from_slice(raw).map_err(|e| {
        BackendError::Malformed(vec![crate::model::Violation::new("$", e.to_string())])
    })
}
