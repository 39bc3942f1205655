//! The closed editing loop: policy, editor, terminator, repeated until a stop
//! or the step budget, plus latency accounting over finished trajectories.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::model::{
    AtomicInstruction, BackendIds, ComplexInstruction, EpisodeId, Image, ImageSet, ModelError,
    StepRecord, Termination, Trajectory,
};
use crate::protocol::{
    BackendError, Decision, EditorBackend, EditorRequest, ImagePayload, PolicyBackend,
    PolicyRequest, TerminatorBackend, TerminatorRequest,
};

pub const DEFAULT_MAX_STEPS: usize = 5;
pub const MAX_RETRY_LIMIT: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("invalid loop config: {0}")]
    Config(String),
    #[error("step {step} is missing {field}")]
    MissingTiming { step: usize, field: &'static str },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    /// Upper bound on loop iterations, counting a final stop step.
    pub max_steps: usize,
    /// Calls slower than this count as timed out and may be retried.
    pub per_call_timeout: Duration,
    /// Extra attempts after a transient failure.
    pub retry_limit: usize,
    /// Store the policy's reasoning in `policy_raw` instead of just its
    /// instruction text.
    pub record_reasoning: bool,
    /// Send previously executed atomic instructions to the policy.
    pub forward_history: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            per_call_timeout: Duration::from_secs(60),
            retry_limit: 1,
            record_reasoning: false,
            forward_history: false,
        }
    }
}

impl LoopConfig {
    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn with_retry_limit(mut self, retry_limit: usize) -> Self {
        self.retry_limit = retry_limit;
        self
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.max_steps == 0 {
            return Err(RuntimeError::Config("max_steps must be at least 1".into()));
        }
        if self.retry_limit > MAX_RETRY_LIMIT {
            return Err(RuntimeError::Config(format!(
                "retry_limit {} exceeds {MAX_RETRY_LIMIT}",
                self.retry_limit
            )));
        }
        if self.per_call_timeout.is_zero() {
            return Err(RuntimeError::Config("per_call_timeout must be positive".into()));
        }
        Ok(())
    }
}

/// Backend clients for one or many episodes. Without a terminator, only a
/// policy stop ends the episode early.
#[derive(Clone)]
pub struct Backends {
    pub policy: Arc<dyn PolicyBackend>,
    pub editor: Arc<dyn EditorBackend>,
    pub terminator: Option<Arc<dyn TerminatorBackend>>,
}

impl Backends {
    pub fn new(
        policy: Arc<dyn PolicyBackend>,
        editor: Arc<dyn EditorBackend>,
        terminator: Option<Arc<dyn TerminatorBackend>>,
    ) -> Self {
        Self {
            policy,
            editor,
            terminator,
        }
    }
}

/// Runs `call` up to `1 + retry_limit` times while it fails transiently.
/// Returns the response and the seconds to record for it.
fn call_with_retry<T>(
    config: &LoopConfig,
    synthetic: Option<f64>,
    mut call: impl FnMut() -> Result<T, BackendError>,
) -> Result<(T, f64), BackendError> {
    let mut elapsed = 0.0;
    let mut attempt = 0;
    loop {
        let start = Instant::now();
        let result = call();
        let took = start.elapsed();
        elapsed += took.as_secs_f64();
        let result = match result {
            Ok(_) if synthetic.is_none() && took > config.per_call_timeout => Err(BackendError::Timeout(
                format!("call took {:.3}s, limit {:.3}s", took.as_secs_f64(), config.per_call_timeout.as_secs_f64()),
            )),
            other => other,
        };
        match result {
            Ok(v) => return Ok((v, synthetic.unwrap_or(elapsed))),
            Err(e) if e.is_transient() && attempt < config.retry_limit => attempt += 1,
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Policy,
    Editor,
    Terminator,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Policy => "policy",
            Stage::Editor => "editor",
            Stage::Terminator => "terminator",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage} failed at step {step}: {error}")]
pub struct StepFailure {
    pub stage: Stage,
    pub step: usize,
    pub error: BackendError,
}

/// Result of one loop iteration.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub record: StepRecord,
    /// The edited image, or the unchanged frontier after a stop.
    pub frontier: Image,
}

/// Asks the policy for the next action and, for an edit, runs the editor on
/// the frontier exactly once. A stop never reaches the editor.
pub fn step_once(
    original: &Image,
    frontier: &Image,
    trajectory: &Trajectory,
    policy: &dyn PolicyBackend,
    editor: &dyn EditorBackend,
    config: &LoopConfig,
) -> Result<StepOutput, StepFailure> {
    let index = trajectory.steps().len() + 1;
    let fail = |stage, error| StepFailure { stage, step: index, error };
    let request = PolicyRequest {
        original_image: ImagePayload::inline(original),
        current_image: ImagePayload::inline(frontier),
        instruction: trajectory.instruction().text().to_string(),
        history: if config.forward_history {
            trajectory.instruction_texts().into_iter().map(str::to_string).collect()
        } else {
            Vec::new()
        },
    };
    let (response, policy_latency) =
        call_with_retry(config, policy.synthetic_latency(), || policy.step(&request))
            .map_err(|e| fail(Stage::Policy, e))?;
    let instruction = match response.action {
        crate::model::ActionKind::Stop => AtomicInstruction::stop(),
        crate::model::ActionKind::Edit => response
            .instruction_text
            .as_deref()
            .ok_or_else(|| ModelError::InvalidAtomic("edit action without instruction_text".into()))
            .and_then(AtomicInstruction::edit)
            .map_err(|e| fail(Stage::Policy, malformed("instruction_text", e)))?,
    };
    let policy_raw = match (&response.reasoning, config.record_reasoning) {
        (Some(r), true) => r.clone(),
        _ => instruction.text().to_string(),
    };
    let ids = |editor_id: Option<&str>| BackendIds {
        policy: policy.id().to_string(),
        editor: editor_id.map(str::to_string),
    };

    if instruction.is_stop() {
        let mut record = StepRecord::stop(index, frontier.reference().clone(), policy_latency);
        record.policy_raw = policy_raw;
        record.backend_ids = ids(None);
        return Ok(StepOutput {
            record,
            frontier: frontier.clone(),
        });
    }

    let request = EditorRequest {
        image: ImagePayload::inline(frontier),
        instruction_text: instruction.text().to_string(),
    };
    let (response, editor_latency) =
        call_with_retry(config, editor.synthetic_latency(), || editor.apply(&request))
            .map_err(|e| fail(Stage::Editor, e))?;
    let edited = response
        .image
        .to_image()
        .map_err(|e| fail(Stage::Editor, malformed("image", e)))?;
    let r = edited.reference();
    if (r.width, r.height) != (response.width, response.height) {
        return Err(fail(
            Stage::Editor,
            malformed(
                "width",
                format!("declared {}x{}, image is {}x{}", response.width, response.height, r.width, r.height),
            ),
        ));
    }
    let mut record = StepRecord::edit(
        index,
        frontier.reference().clone(),
        edited.reference().clone(),
        instruction,
        policy_latency,
        editor_latency,
    );
    record.policy_raw = policy_raw;
    record.backend_ids = ids(Some(editor.id()));
    Ok(StepOutput {
        record,
        frontier: edited,
    })
}

fn malformed(path: &str, message: impl ToString) -> BackendError {
    BackendError::Malformed(vec![crate::model::Violation::new(path, message.to_string())])
}

/// A finished episode and every image its trajectory references.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    pub images: ImageSet,
}

impl EpisodeOutcome {
    pub fn final_image(&self) -> &Image {
        self.images
            .get(&self.trajectory.final_image().content_hash)
            .expect("outcome holds every referenced image")
    }
}

/// Runs one episode to completion.
///
/// After each edit the terminator (when configured) is consulted once with
/// (I_t, I_0, C); a stop decision is recorded as a stop step carrying the
/// terminator's latency. The budget counts every step, stop steps included,
/// and an episode that spends it on edits ends as `budget_exhausted` with the
/// last edit as its final image. Backend failures end the episode as
/// `backend_error` with the steps completed so far.
pub fn run_episode(
    id: EpisodeId,
    original: &Image,
    instruction: &ComplexInstruction,
    backends: &Backends,
    config: &LoopConfig,
) -> Result<EpisodeOutcome, RuntimeError> {
    config.validate()?;
    let mut trajectory = Trajectory::new(id, original.reference().clone(), instruction.clone());
    let mut images = ImageSet::new();
    images.insert(original.clone());
    let mut frontier = original.clone();

    let failure = loop {
        let out = match step_once(
            original,
            &frontier,
            &trajectory,
            backends.policy.as_ref(),
            backends.editor.as_ref(),
            config,
        ) {
            Ok(out) => out,
            Err(f) => break Some(f),
        };
        let stopped = out.record.is_stop();
        images.insert(out.frontier.clone());
        frontier = out.frontier;
        trajectory.append_step(out.record)?;
        if stopped {
            break None;
        }
        if trajectory.steps().len() >= config.max_steps {
            trajectory.finish(Termination::BudgetExhausted, None)?;
            break None;
        }
        let Some(terminator) = &backends.terminator else {
            continue;
        };
        let request = TerminatorRequest {
            current_image: ImagePayload::inline(&frontier),
            original_image: ImagePayload::inline(original),
            instruction: instruction.text().to_string(),
        };
        let index = trajectory.steps().len();
        let (response, latency) =
            match call_with_retry(config, terminator.synthetic_latency(), || terminator.decide(&request)) {
                Ok(r) => r,
                Err(error) => {
                    break Some(StepFailure {
                        stage: Stage::Terminator,
                        step: index,
                        error,
                    })
                }
            };
        if response.decision == Decision::Stop {
            let mut record = StepRecord::stop(index + 1, frontier.reference().clone(), latency);
            record.policy_raw = "terminator: stop".into();
            record.backend_ids = BackendIds {
                policy: terminator.id().to_string(),
                editor: None,
            };
            trajectory.append_step(record)?;
            break None;
        }
        trajectory.set_terminator_latency(index, latency)?;
    };
    if let Some(f) = failure {
        trajectory.finish(Termination::BackendError, Some(f.to_string()))?;
    }
    trajectory.validate()?;
    Ok(EpisodeOutcome { trajectory, images })
}

/// Executes a fixed plan without re-observing: every atomic instruction goes
/// to the editor in order, then the episode stops. Plans longer than the
/// budget allows are cut off as `budget_exhausted`.
pub fn run_plan(
    id: EpisodeId,
    original: &Image,
    instruction: &ComplexInstruction,
    plan: &[String],
    editor: &dyn EditorBackend,
    config: &LoopConfig,
) -> Result<EpisodeOutcome, RuntimeError> {
    config.validate()?;
    let policy = crate::protocol::mock::ScriptedPolicy::new(
        plan.iter().cloned().chain(std::iter::once(crate::model::STOP_TOKEN.to_string())),
    );
    let mut trajectory = Trajectory::new(id, original.reference().clone(), instruction.clone());
    let mut images = ImageSet::new();
    images.insert(original.clone());
    let mut frontier = original.clone();
    loop {
        if trajectory.steps().len() >= config.max_steps {
            trajectory.finish(Termination::BudgetExhausted, None)?;
            break;
        }
        match step_once(original, &frontier, &trajectory, &policy, editor, config) {
            Ok(out) => {
                let stopped = out.record.is_stop();
                images.insert(out.frontier.clone());
                frontier = out.frontier;
                trajectory.append_step(out.record)?;
                if stopped {
                    break;
                }
            }
            Err(f) => {
                trajectory.finish(Termination::BackendError, Some(f.to_string()))?;
                break;
            }
        }
    }
    Ok(EpisodeOutcome { trajectory, images })
}

/// Outcome of single-turn instruction refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub instruction: AtomicInstruction,
    pub reasoning: Option<String>,
    /// Set when the policy answered with a stop instead of a rewrite.
    pub warning: Option<String>,
}

/// Asks the policy once for an executable rewrite of `instruction`. The
/// editor and terminator are never involved.
pub fn refine_once(
    original: &Image,
    instruction: &ComplexInstruction,
    policy: &dyn PolicyBackend,
    config: &LoopConfig,
) -> Result<Refinement, RuntimeError> {
    config.validate()?;
    let request = PolicyRequest {
        original_image: ImagePayload::inline(original),
        current_image: ImagePayload::inline(original),
        instruction: instruction.text().to_string(),
        history: Vec::new(),
    };
    let (response, _) = call_with_retry(config, policy.synthetic_latency(), || policy.step(&request))?;
    let (instruction, warning) = match (response.action, response.instruction_text.as_deref()) {
        (crate::model::ActionKind::Stop, _) => (
            AtomicInstruction::stop(),
            Some("policy returned stop; no refinement produced".to_string()),
        ),
        (crate::model::ActionKind::Edit, text) => (
            AtomicInstruction::edit(text.unwrap_or_default()).map_err(|e| malformed("instruction_text", e))?,
            None,
        ),
    };
    Ok(Refinement {
        instruction,
        reasoning: response.reasoning,
        warning,
    })
}

/// Per-episode call counts and time totals. The total covers policy and
/// editor time; terminator checks that chose to continue are not counted.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyReport {
    pub n_policy_calls: usize,
    pub n_editor_calls: usize,
    pub total_policy: f64,
    pub total_editor: f64,
    pub total: f64,
}

pub fn account_latency(trajectory: &Trajectory) -> Result<LatencyReport, RuntimeError> {
    let mut report = LatencyReport::default();
    for step in trajectory.steps() {
        let policy = step.policy_latency.ok_or(RuntimeError::MissingTiming {
            step: step.index,
            field: "policy_latency",
        })?;
        report.n_policy_calls += 1;
        report.total_policy += policy;
        if !step.is_stop() {
            let editor = step.editor_latency.ok_or(RuntimeError::MissingTiming {
                step: step.index,
                field: "editor_latency",
            })?;
            report.n_editor_calls += 1;
            report.total_editor += editor;
        }
    }
    report.total = report.total_policy + report.total_editor;
    Ok(report)
}

/// Means of each [`LatencyReport`] field over a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencySummary {
    pub episodes: usize,
    pub mean_policy_calls: f64,
    pub mean_editor_calls: f64,
    pub mean_policy: f64,
    pub mean_editor: f64,
    pub mean_total: f64,
}

pub fn mean_latency(reports: &[LatencyReport]) -> LatencySummary {
    if reports.is_empty() {
        return LatencySummary::default();
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&LatencyReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    LatencySummary {
        episodes: reports.len(),
        mean_policy_calls: mean(|r| r.n_policy_calls as f64),
        mean_editor_calls: mean(|r| r.n_editor_calls as f64),
        mean_policy: mean(|r| r.total_policy),
        mean_editor: mean(|r| r.total_editor),
        mean_total: mean(|r| r.total),
    }
}
