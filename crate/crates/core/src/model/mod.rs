//! Canonical domain types: images, instructions, steps, trajectories and
//! scores, plus the append-only trajectory store.

mod image;
mod store;
mod trajectory;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use image::{content_address, ContentHash, Image, ImageRef, MediaKind};
pub use store::{BlobStore, ImageSet, TrajectoryStore};
pub use trajectory::{BackendIds, StepRecord, Termination, Trajectory, TRAJECTORY_SCHEMA};

/// Literal text of the stop action.
pub const STOP_TOKEN: &str = "<Stop>";

/// Default cap on complex-instruction length, in words.
pub const DEFAULT_WORD_CAP: usize = 77;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("instruction has {count} words, cap is {cap}")]
    WordCap { count: usize, cap: usize },
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error("invalid atomic instruction: {0}")]
    InvalidAtomic(String),
    #[error("chain break: expected step index {expected}, got {got}")]
    ChainBreak { expected: usize, got: usize },
    #[error("state mismatch at step {index}: input image is not the current frontier")]
    StateMismatch { index: usize },
    #[error("episode already terminated")]
    Terminated,
    #[error("invalid step {index}: {reason}")]
    InvalidStep { index: usize, reason: String },
    #[error("score out of range: {0}")]
    ScoreRange(String),
    #[error("episode {0} already present in store")]
    Conflict(EpisodeId),
    #[error("dangling image reference {0}")]
    DanglingRef(ContentHash),
    #[error("episode {0} not found")]
    NotFound(EpisodeId),
    #[error("invalid trajectory: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("corrupt store record at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// A single schema or invariant violation, located by a field path such as
/// `steps[2].input_image`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpisodeId(pub String);

impl EpisodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EpisodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// User-level request composed of several atomic goals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexInstruction {
    text: String,
    word_count: usize,
}

impl ComplexInstruction {
    /// Validates against `cap` words. Over-long text is rejected, never
    /// truncated.
    pub fn with_cap(text: impl Into<String>, cap: usize) -> Result<Self, ModelError> {
        let text = text.into();
        let count = word_count(&text);
        if count == 0 {
            return Err(ModelError::EmptyInstruction);
        }
        if count > cap {
            return Err(ModelError::WordCap { count, cap });
        }
        Ok(Self {
            text,
            word_count: count,
        })
    }

    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        Self::with_cap(text, DEFAULT_WORD_CAP)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn word_count(&self) -> usize {
        self.word_count
    }

    pub(crate) fn violations(&self, path: &str, out: &mut Vec<Violation>) {
        let actual = word_count(&self.text);
        if actual != self.word_count {
            out.push(Violation::new(
                format!("{path}.word_count"),
                format!("declared {} but text has {actual} words", self.word_count),
            ));
        }
        if actual == 0 {
            out.push(Violation::new(format!("{path}.text"), "empty instruction"));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Edit,
    Stop,
}

/// One atomic action: an edit instruction or the stop token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomicInstruction {
    text: String,
    action_kind: ActionKind,
}

impl AtomicInstruction {
    pub fn edit(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::InvalidAtomic("edit text is empty".into()));
        }
        if text.trim() == STOP_TOKEN {
            return Err(ModelError::InvalidAtomic("stop token used as edit text".into()));
        }
        Ok(Self {
            text,
            action_kind: ActionKind::Edit,
        })
    }

    pub fn stop() -> Self {
        Self {
            text: STOP_TOKEN.to_string(),
            action_kind: ActionKind::Stop,
        }
    }

    /// Classifies raw policy text: the stop token becomes a stop action.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        if text.trim() == STOP_TOKEN {
            Ok(Self::stop())
        } else {
            Self::edit(text)
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn kind(&self) -> ActionKind {
        self.action_kind
    }

    pub fn is_stop(&self) -> bool {
        self.action_kind == ActionKind::Stop
    }

    pub(crate) fn violations(&self, path: &str, out: &mut Vec<Violation>) {
        match self.action_kind {
            ActionKind::Stop if self.text != STOP_TOKEN => out.push(Violation::new(
                format!("{path}.text"),
                format!("stop action must carry {STOP_TOKEN:?}"),
            )),
            ActionKind::Edit if self.text.trim().is_empty() => {
                out.push(Violation::new(format!("{path}.text"), "edit text is empty"))
            }
            _ => {}
        }
    }
}

/// Semantic consistency, perceptual quality and overall score, each on the
/// 0-10 judge scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub sc: f64,
    pub pq: f64,
    pub overall: f64,
}

impl ScoreTriple {
    pub fn new(sc: f64, pq: f64, overall: f64) -> Result<Self, ModelError> {
        let s = Self { sc, pq, overall };
        match s.violations("score").first() {
            Some(v) => Err(ModelError::ScoreRange(v.to_string())),
            None => Ok(s),
        }
    }

    /// Overall score as the geometric mean of SC and PQ.
    pub fn from_sc_pq(sc: f64, pq: f64) -> Result<Self, ModelError> {
        Self::new(sc, pq, (sc * pq).sqrt())
    }

    pub fn violations(&self, path: &str) -> Vec<Violation> {
        [("sc", self.sc), ("pq", self.pq), ("overall", self.overall)]
            .into_iter()
            .filter(|(_, v)| !(0.0..=10.0).contains(v))
            .map(|(name, v)| Violation::new(format!("{path}.{name}"), format!("{v} outside [0,10]")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_cap_enforced() {
        let ok = ComplexInstruction::with_cap("a b c", 3).unwrap();
        assert_eq!(ok.word_count(), 3);
        assert!(matches!(
            ComplexInstruction::with_cap("a b c d", 3),
            Err(ModelError::WordCap { count: 4, cap: 3 })
        ));
        let long = vec!["w"; 78].join(" ");
        assert!(ComplexInstruction::new(long).is_err());
        assert!(ComplexInstruction::new(vec!["w"; 77].join(" ")).is_ok());
        assert!(matches!(ComplexInstruction::new("   "), Err(ModelError::EmptyInstruction)));
    }

    #[test]
    fn atomic_kinds() {
        assert!(AtomicInstruction::from_text("<Stop>").unwrap().is_stop());
        assert!(!AtomicInstruction::from_text("set 1 1 R").unwrap().is_stop());
        assert!(AtomicInstruction::edit("").is_err());
        assert!(AtomicInstruction::edit("<Stop>").is_err());
    }

    #[test]
    fn score_bounds() {
        assert!(ScoreTriple::new(10.0, 0.0, 5.0).is_ok());
        assert!(ScoreTriple::new(11.0, 0.0, 5.0).is_err());
        assert!(ScoreTriple::new(f64::NAN, 0.0, 5.0).is_err());
        let v = ScoreTriple { sc: -1.0, pq: 12.0, overall: 1.0 }.violations("s");
        assert_eq!(v.len(), 2);
        assert_eq!(ScoreTriple::from_sc_pq(10.0, 2.5).unwrap().overall, 5.0);
    }
}
