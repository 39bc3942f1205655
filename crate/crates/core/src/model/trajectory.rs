use serde::{Deserialize, Serialize};

use super::{
    AtomicInstruction, ComplexInstruction, EpisodeId, ImageRef, ModelError, Violation,
};

pub const TRAJECTORY_SCHEMA: &str = "mira-trajectory/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stopped,
    BudgetExhausted,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BackendIds {
    pub policy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editor: Option<String>,
}

/// One loop iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based.
    pub index: usize,
    pub input_image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_image: Option<ImageRef>,
    pub instruction: AtomicInstruction,
    /// Reasoning trace or raw text returned by the policy.
    #[serde(default)]
    pub policy_raw: String,
    /// Seconds; absent only in hand-written or damaged records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editor_latency: Option<f64>,
    /// Time spent in the termination check that followed this edit. Kept for
    /// inspection; not part of the latency totals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminator_latency: Option<f64>,
    #[serde(default)]
    pub backend_ids: BackendIds,
}

impl StepRecord {
    pub fn edit(
        index: usize,
        input_image: ImageRef,
        output_image: ImageRef,
        instruction: AtomicInstruction,
        policy_latency: f64,
        editor_latency: f64,
    ) -> Self {
        Self {
            index,
            input_image,
            output_image: Some(output_image),
            instruction,
            policy_raw: String::new(),
            policy_latency: Some(policy_latency),
            editor_latency: Some(editor_latency),
            terminator_latency: None,
            backend_ids: BackendIds::default(),
        }
    }

    pub fn stop(index: usize, input_image: ImageRef, policy_latency: f64) -> Self {
        Self {
            index,
            input_image,
            output_image: None,
            instruction: AtomicInstruction::stop(),
            policy_raw: String::new(),
            policy_latency: Some(policy_latency),
            editor_latency: Some(0.0),
            terminator_latency: None,
            backend_ids: BackendIds::default(),
        }
    }

    pub fn is_stop(&self) -> bool {
        self.instruction.is_stop()
    }

    fn shape_violations(&self, path: &str, out: &mut Vec<Violation>) {
        self.instruction.violations(&format!("{path}.instruction"), out);
        if self.is_stop() {
            if self.output_image.is_some() {
                out.push(Violation::new(
                    format!("{path}.output_image"),
                    "stop step must not carry an output image",
                ));
            }
            if matches!(self.editor_latency, Some(l) if l != 0.0) {
                out.push(Violation::new(
                    format!("{path}.editor_latency"),
                    "stop step performs no edit; latency must be 0",
                ));
            }
        } else if self.output_image.is_none() {
            out.push(Violation::new(
                format!("{path}.output_image"),
                "edit step requires an output image",
            ));
        }
        for (name, v) in [
            ("policy_latency", self.policy_latency),
            ("editor_latency", self.editor_latency),
            ("terminator_latency", self.terminator_latency),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    out.push(Violation::new(format!("{path}.{name}"), format!("invalid latency {v}")));
                }
            }
        }
    }
}

/// Ordered record of one editing episode.
///
/// [`Trajectory::append_step`] mutates in place and leaves the trajectory
/// untouched when it returns an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    schema: String,
    episode_id: EpisodeId,
    original_image: ImageRef,
    instruction: ComplexInstruction,
    steps: Vec<StepRecord>,
    termination: Option<Termination>,
    final_image: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
}

impl Trajectory {
    pub fn new(episode_id: EpisodeId, original_image: ImageRef, instruction: ComplexInstruction) -> Self {
        Self {
            schema: TRAJECTORY_SCHEMA.to_string(),
            episode_id,
            original_image,
            instruction,
            steps: Vec::new(),
            termination: None,
            final_image: original_image,
            failure: None,
        }
    }

    pub fn episode_id(&self) -> &EpisodeId {
        &self.episode_id
    }

    pub fn original_image(&self) -> &ImageRef {
        &self.original_image
    }

    pub fn instruction(&self) -> &ComplexInstruction {
        &self.instruction
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }

    /// Latest edited image, or the original before any edit.
    pub fn final_image(&self) -> &ImageRef {
        &self.final_image
    }

    pub fn frontier(&self) -> &ImageRef {
        &self.final_image
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    pub fn is_terminated(&self) -> bool {
        self.termination.is_some()
    }

    pub fn edit_steps(&self) -> usize {
        self.steps.iter().filter(|s| !s.is_stop()).count()
    }

    /// Atomic instruction texts in step order (stop token included).
    pub fn instruction_texts(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.instruction.text()).collect()
    }

    /// Every image this trajectory references, deduplicated, in first-use order.
    pub fn image_refs(&self) -> Vec<ImageRef> {
        let mut out = vec![self.original_image];
        for s in &self.steps {
            out.push(s.input_image);
            out.extend(s.output_image);
        }
        out.push(self.final_image);
        let mut seen = std::collections::HashSet::new();
        out.retain(|r| seen.insert(r.content_hash));
        out
    }

    pub fn append_step(&mut self, step: StepRecord) -> Result<(), ModelError> {
        if self.termination.is_some() {
            return Err(ModelError::Terminated);
        }
        let expected = self.steps.len() + 1;
        if step.index != expected {
            return Err(ModelError::ChainBreak {
                expected,
                got: step.index,
            });
        }
        if step.input_image != self.final_image {
            return Err(ModelError::StateMismatch { index: step.index });
        }
        let mut problems = Vec::new();
        step.shape_violations("step", &mut problems);
        if let Some(v) = problems.first() {
            return Err(ModelError::InvalidStep {
                index: step.index,
                reason: v.to_string(),
            });
        }
        if step.is_stop() {
            self.termination = Some(Termination::Stopped);
        } else if let Some(out) = step.output_image {
            self.final_image = out;
        }
        self.steps.push(step);
        Ok(())
    }

    /// Closes the episode. `Stopped` is only reachable by appending a stop step.
    /// Records the latency of the termination check that followed step
    /// `index`.
    pub fn set_terminator_latency(&mut self, index: usize, seconds: f64) -> Result<(), ModelError> {
        if !(seconds.is_finite() && seconds >= 0.0) {
            return Err(ModelError::InvalidStep { index, reason: format!("invalid terminator latency {seconds}") });
        }
        let step = self
            .steps
            .iter_mut()
            .find(|s| s.index == index)
            .ok_or_else(|| ModelError::InvalidStep { index, reason: "no such step".into() })?;
        step.terminator_latency = Some(seconds);
        Ok(())
    }

    pub fn finish(&mut self, termination: Termination, failure: Option<String>) -> Result<(), ModelError> {
        if self.termination.is_some() {
            return Err(ModelError::Terminated);
        }
        if termination == Termination::Stopped {
            return Err(ModelError::InvalidStep {
                index: self.steps.len(),
                reason: "stopped episodes must end with a stop step".into(),
            });
        }
        self.termination = Some(termination);
        self.failure = failure;
        Ok(())
    }

    /// Every structural and chaining invariant that fails, with field paths.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.schema != TRAJECTORY_SCHEMA {
            out.push(Violation::new(
                "schema",
                format!("expected {TRAJECTORY_SCHEMA:?}, found {:?}", self.schema),
            ));
        }
        if self.episode_id.0.is_empty() {
            out.push(Violation::new("episode_id", "empty"));
        }
        self.instruction.violations("instruction", &mut out);
        let mut frontier = self.original_image;
        let mut stops = 0;
        for (i, step) in self.steps.iter().enumerate() {
            let path = format!("steps[{i}]");
            if step.index != i + 1 {
                out.push(Violation::new(
                    format!("{path}.index"),
                    format!("chain break: expected {}, found {}", i + 1, step.index),
                ));
            }
            if step.input_image != frontier {
                let what = if i == 0 {
                    "first step must start from original_image"
                } else {
                    "input does not match previous step's output"
                };
                out.push(Violation::new(format!("{path}.input_image"), what));
            }
            step.shape_violations(&path, &mut out);
            if step.is_stop() {
                stops += 1;
                if i + 1 != self.steps.len() {
                    out.push(Violation::new(format!("{path}.instruction"), "stop step must be last"));
                }
            } else if let Some(o) = step.output_image {
                frontier = o;
            }
        }
        if stops > 1 {
            out.push(Violation::new("steps", format!("{stops} stop steps")));
        }
        let ends_with_stop = self.steps.last().map(StepRecord::is_stop).unwrap_or(false);
        match self.termination {
            None => {}
            Some(Termination::Stopped) if !ends_with_stop => out.push(Violation::new(
                "termination",
                "stopped episode must end with a stop step",
            )),
            Some(t) if t != Termination::Stopped && ends_with_stop => out.push(Violation::new(
                "termination",
                "episode ending in a stop step must be marked stopped",
            )),
            _ => {}
        }
        if self.final_image != frontier {
            out.push(Violation::new(
                "final_image",
                "must equal the last edit output (or original_image)",
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(v))
        }
    }
}
