//! Deterministic in-process backends over the symbol-grid environment.
//!
//! Every mock counts its invocations. Goal-aware mocks recover the goal set by
//! parsing the complex instruction against the grid in the request.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{
    BackendError, Decision, EditorBackend, EditorRequest, EditorResponse, ImagePayload,
    PolicyBackend, PolicyRequest, PolicyResponse, ScorerBackend, ScorerRequest, ScorerResponse,
    TerminatorBackend, TerminatorRequest, TerminatorResponse,
};
use crate::grid::{self, GoalSet, Grid, GridOp, OracleAction};
use crate::model::{ContentHash, Image, ScoreTriple, STOP_TOKEN};

fn grid_of(payload: &ImagePayload, field: &str) -> Result<Grid, BackendError> {
    payload
        .to_image()
        .and_then(|img| img.to_grid())
        .map_err(|e| BackendError::remote(422, format!("{field}: {e}")))
}

fn goals_of(text: &str, grid: &Grid) -> Result<GoalSet, BackendError> {
    GoalSet::for_grid(text, grid).map_err(|e| BackendError::remote(422, format!("instruction: {e}")))
}

#[derive(Debug, Default)]
struct Counter(AtomicUsize);

impl Counter {
    fn bump(&self) -> usize {
        self.0.fetch_add(1, Ordering::SeqCst)
    }
    fn get(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }
}

/// Replays a fixed list of policy outputs; `<Stop>` entries become stop
/// actions. Calls past the end fail with [`BackendError::ScriptUnderflow`].
#[derive(Debug)]
pub struct ScriptedPolicy {
    script: Vec<String>,
    cursor: Mutex<usize>,
    calls: Counter,
}

impl ScriptedPolicy {
    pub fn new<S: Into<String>>(script: impl IntoIterator<Item = S>) -> Self {
        Self {
            script: script.into_iter().map(Into::into).collect(),
            cursor: Mutex::new(0),
            calls: Counter::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl PolicyBackend for ScriptedPolicy {
    fn id(&self) -> &str {
        "mock:scripted_policy"
    }

    fn step(&self, _req: &PolicyRequest) -> Result<PolicyResponse, BackendError> {
        let calls = self.calls.bump() + 1;
        let mut cursor = self.cursor.lock().unwrap();
        let Some(entry) = self.script.get(*cursor) else {
            return Err(BackendError::ScriptUnderflow { calls });
        };
        *cursor += 1;
        Ok(if entry.trim() == STOP_TOKEN {
            PolicyResponse::stop()
        } else {
            PolicyResponse::edit(entry.clone())
        })
    }
}

/// Fixes the first unsatisfied goal each call; stops when all hold.
#[derive(Debug, Default)]
pub struct OraclePolicy {
    calls: Counter,
}

impl OraclePolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl PolicyBackend for OraclePolicy {
    fn id(&self) -> &str {
        "mock:oracle_policy"
    }

    fn step(&self, req: &PolicyRequest) -> Result<PolicyResponse, BackendError> {
        self.calls.bump();
        let current = grid_of(&req.current_image, "current_image")?;
        let original = grid_of(&req.original_image, "original_image")?;
        let goals = goals_of(&req.instruction, &current)?;
        let satisfied = goals.satisfied_count(&current);
        Ok(match grid::oracle_policy(&current, &original, &goals) {
            OracleAction::Stop => PolicyResponse::stop()
                .with_reasoning(format!("all {} goals satisfied", goals.len())),
            OracleAction::Edit(op) => PolicyResponse::edit(op.to_string()).with_reasoning(format!(
                "{satisfied}/{} goals satisfied; next: {}",
                goals.len(),
                op.to_natural()
            )),
        })
    }
}

/// Fault injection settings for [`GridEditor`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    pub rate: f64,
    pub seed: u64,
}

/// Applies parsed [`GridOp`]s. With a fault config, each edit may flip one
/// cell outside the op's target cells. The fault draw is seeded from the
/// request content, so identical requests always get identical responses.
#[derive(Debug, Default)]
pub struct GridEditor {
    fault: Option<FaultConfig>,
    calls: Counter,
    faults: Counter,
}

impl GridEditor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_faults(fault: FaultConfig) -> Self {
        Self {
            fault: Some(fault),
            ..Self::default()
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    /// Number of edits that had a fault injected.
    pub fn faults(&self) -> usize {
        self.faults.get()
    }
}

fn op_targets(grid: &Grid, op: &GridOp) -> Vec<bool> {
    let mut mask = vec![false; grid.len()];
    for (i, cell) in grid.cells().iter().enumerate() {
        let (r, c) = grid.coords(i);
        mask[i] = match *op {
            GridOp::Set { row, col, .. } => r == row && c == col,
            GridOp::Recolor { from, .. } => *cell == from,
            GridOp::FillRow { row, .. } => r == row,
            GridOp::Noop => false,
        };
    }
    mask
}

impl EditorBackend for GridEditor {
    fn id(&self) -> &str {
        "mock:grid_editor"
    }

    fn apply(&self, req: &EditorRequest) -> Result<EditorResponse, BackendError> {
        self.calls.bump();
        let grid = grid_of(&req.image, "image")?;
        let op = GridOp::parse(&req.instruction_text).map_err(|e| BackendError::remote(422, e.to_string()))?;
        let mut edited = op.apply(&grid).map_err(|e| BackendError::remote(422, e.to_string()))?;
        if let Some(fault) = self.fault {
            let key = format!("{grid}\n{}", req.instruction_text);
            let digest = ContentHash::of(key.as_bytes());
            let salt = u64::from_le_bytes(digest.as_bytes()[..8].try_into().unwrap());
            let out = grid::inject_fault(&edited, fault.rate, fault.seed ^ salt, &op_targets(&grid, &op));
            if out.flipped.is_some() {
                self.faults.bump();
            }
            edited = out.grid;
        }
        Ok(EditorResponse::from_image(&Image::from_grid(&edited)))
    }
}

/// Stops once every goal parsed from the instruction holds.
#[derive(Debug, Default)]
pub struct GoalTerminator {
    calls: Counter,
}

impl GoalTerminator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl TerminatorBackend for GoalTerminator {
    fn id(&self) -> &str {
        "mock:goal_terminator"
    }

    fn decide(&self, req: &TerminatorRequest) -> Result<TerminatorResponse, BackendError> {
        self.calls.bump();
        let current = grid_of(&req.current_image, "current_image")?;
        let goals = goals_of(&req.instruction, &current)?;
        let decision = if goals.all_satisfied(&current) {
            Decision::Stop
        } else {
            Decision::Continue
        };
        Ok(TerminatorResponse { decision })
    }
}

/// Goal-based SC, collateral-based PQ and their geometric mean as overall.
#[derive(Debug)]
pub struct GridScorer {
    id: String,
    calls: Counter,
}

impl Default for GridScorer {
    fn default() -> Self {
        Self::named("mock:grid_scorer")
    }
}

impl GridScorer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn named(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            calls: Counter::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl ScorerBackend for GridScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, req: &ScorerRequest) -> Result<ScorerResponse, BackendError> {
        self.calls.bump();
        let source = grid_of(&req.source_image, "source_image")?;
        let edited = grid_of(&req.edited_image, "edited_image")?;
        let goals = goals_of(&req.instruction_text, &source)?;
        let sc = grid::grid_sc(&edited, &goals);
        let pq = grid::grid_pq(&source, &edited, &goals).map_err(|e| BackendError::remote(422, e.to_string()))?;
        let scores = ScoreTriple::from_sc_pq(sc, pq).map_err(|e| BackendError::remote(500, e.to_string()))?;
        Ok(ScorerResponse { scores })
    }
}

/// Reports a fixed latency for every call of the wrapped backend.
#[derive(Debug)]
pub struct FixedLatency<B> {
    inner: B,
    seconds: f64,
}

impl<B> FixedLatency<B> {
    pub fn new(inner: B, seconds: f64) -> Self {
        Self { inner, seconds }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: PolicyBackend> PolicyBackend for FixedLatency<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn step(&self, req: &PolicyRequest) -> Result<PolicyResponse, BackendError> {
        self.inner.step(req)
    }
    fn synthetic_latency(&self) -> Option<f64> {
        Some(self.seconds)
    }
}

impl<B: EditorBackend> EditorBackend for FixedLatency<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn apply(&self, req: &EditorRequest) -> Result<EditorResponse, BackendError> {
        self.inner.apply(req)
    }
    fn synthetic_latency(&self) -> Option<f64> {
        Some(self.seconds)
    }
}

impl<B: TerminatorBackend> TerminatorBackend for FixedLatency<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn decide(&self, req: &TerminatorRequest) -> Result<TerminatorResponse, BackendError> {
        self.inner.decide(req)
    }
    fn synthetic_latency(&self) -> Option<f64> {
        Some(self.seconds)
    }
}

/// Fails the first `failures` calls with a transient 503, then delegates.
#[derive(Debug)]
pub struct Flaky<B> {
    inner: B,
    failures: usize,
    calls: Counter,
}

impl<B> Flaky<B> {
    pub fn new(inner: B, failures: usize) -> Self {
        Self {
            inner,
            failures,
            calls: Counter::default(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    fn gate(&self) -> Result<(), BackendError> {
        if self.calls.bump() < self.failures {
            Err(BackendError::remote(503, "injected failure"))
        } else {
            Ok(())
        }
    }
}

impl<B: PolicyBackend> PolicyBackend for Flaky<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn step(&self, req: &PolicyRequest) -> Result<PolicyResponse, BackendError> {
        self.gate()?;
        self.inner.step(req)
    }
}

impl<B: EditorBackend> EditorBackend for Flaky<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn apply(&self, req: &EditorRequest) -> Result<EditorResponse, BackendError> {
        self.gate()?;
        self.inner.apply(req)
    }
}

impl<B: ScorerBackend> ScorerBackend for Flaky<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }
    fn score(&self, req: &ScorerRequest) -> Result<ScorerResponse, BackendError> {
        self.gate()?;
        self.inner.score(req)
    }
}

/// A backend that can never be reached.
#[derive(Debug)]
pub struct Unreachable {
    id: String,
}

impl Unreachable {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into() }
    }

    fn fail(&self) -> BackendError {
        BackendError::Connection(format!("{} is unreachable", self.id))
    }
}

impl PolicyBackend for Unreachable {
    fn id(&self) -> &str {
        &self.id
    }
    fn step(&self, _: &PolicyRequest) -> Result<PolicyResponse, BackendError> {
        Err(self.fail())
    }
}

impl EditorBackend for Unreachable {
    fn id(&self) -> &str {
        &self.id
    }
    fn apply(&self, _: &EditorRequest) -> Result<EditorResponse, BackendError> {
        Err(self.fail())
    }
}

impl TerminatorBackend for Unreachable {
    fn id(&self) -> &str {
        &self.id
    }
    fn decide(&self, _: &TerminatorRequest) -> Result<TerminatorResponse, BackendError> {
        Err(self.fail())
    }
}

impl ScorerBackend for Unreachable {
    fn id(&self) -> &str {
        &self.id
    }
    fn score(&self, _: &ScorerRequest) -> Result<ScorerResponse, BackendError> {
        Err(self.fail())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockKind {
    ScriptedPolicy,
    OraclePolicy,
    GridEditor,
    GoalTerminator,
    GridScorer,
}

impl MockKind {
    pub const ALL: [MockKind; 5] = [
        MockKind::ScriptedPolicy,
        MockKind::OraclePolicy,
        MockKind::GridEditor,
        MockKind::GoalTerminator,
        MockKind::GridScorer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MockKind::ScriptedPolicy => "scripted_policy",
            MockKind::OraclePolicy => "oracle_policy",
            MockKind::GridEditor => "grid_editor",
            MockKind::GoalTerminator => "goal_terminator",
            MockKind::GridScorer => "grid_scorer",
        }
    }
}

impl std::str::FromStr for MockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MockKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown mock kind {s:?}"))
    }
}

/// Configuration accepted by [`make_mock_backend`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockSpec {
    pub script: Vec<String>,
    pub fault: Option<FaultConfig>,
    /// When set, wraps the mock in [`FixedLatency`].
    pub latency: Option<f64>,
}

/// A constructed mock, typed by the contract it fulfils.
#[derive(Clone)]
pub enum MockBackend {
    Policy(Arc<dyn PolicyBackend>),
    Editor(Arc<dyn EditorBackend>),
    Terminator(Arc<dyn TerminatorBackend>),
    Scorer(Arc<dyn ScorerBackend>),
}

pub fn make_mock_backend(kind: MockKind, spec: &MockSpec) -> MockBackend {
    fn timed<B>(b: B, latency: Option<f64>) -> Result<FixedLatency<B>, B> {
        match latency {
            Some(s) => Ok(FixedLatency::new(b, s)),
            None => Err(b),
        }
    }
    match kind {
        MockKind::ScriptedPolicy => MockBackend::Policy(match timed(ScriptedPolicy::new(spec.script.clone()), spec.latency) {
            Ok(b) => Arc::new(b),
            Err(b) => Arc::new(b),
        }),
        MockKind::OraclePolicy => MockBackend::Policy(match timed(OraclePolicy::new(), spec.latency) {
            Ok(b) => Arc::new(b),
            Err(b) => Arc::new(b),
        }),
        MockKind::GridEditor => {
            let editor = match spec.fault {
                Some(f) => GridEditor::with_faults(f),
                None => GridEditor::new(),
            };
            MockBackend::Editor(match timed(editor, spec.latency) {
                Ok(b) => Arc::new(b),
                Err(b) => Arc::new(b),
            })
        }
        MockKind::GoalTerminator => MockBackend::Terminator(match timed(GoalTerminator::new(), spec.latency) {
            Ok(b) => Arc::new(b),
            Err(b) => Arc::new(b),
        }),
        MockKind::GridScorer => MockBackend::Scorer(Arc::new(GridScorer::new())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ActionKind;

    fn payload(text: &str) -> ImagePayload {
        ImagePayload::inline(&Image::from_bytes(text.as_bytes().to_vec()).unwrap())
    }

    fn policy_req(grid: &str, instruction: &str) -> PolicyRequest {
        PolicyRequest {
            original_image: payload(grid),
            current_image: payload(grid),
            instruction: instruction.into(),
            history: vec![],
        }
    }

    #[test]
    fn scripted_policy_in_order_then_underflow() {
        let p = ScriptedPolicy::new(["set 1 1 R", "<Stop>"]);
        let req = policy_req("WW/WW", "x");
        assert_eq!(p.step(&req).unwrap(), PolicyResponse::edit("set 1 1 R"));
        assert_eq!(p.step(&req).unwrap().action, ActionKind::Stop);
        assert!(matches!(p.step(&req), Err(BackendError::ScriptUnderflow { calls: 3 })));
        assert_eq!(p.calls(), 3);
    }

    #[test]
    fn fixed_latency_reports_configured_value() {
        let p = FixedLatency::new(ScriptedPolicy::new(["a"]), 0.746);
        assert_eq!(p.synthetic_latency(), Some(0.746));
        assert_eq!(ScriptedPolicy::new(["a"]).synthetic_latency(), None);
    }

    #[test]
    fn grid_editor_is_deterministic() {
        let e = GridEditor::with_faults(FaultConfig { rate: 0.5, seed: 9 });
        let req = EditorRequest {
            image: payload("RGBW/KYRG/BWKY/RGBW"),
            instruction_text: "set 1 1 K".into(),
        };
        let a = e.apply(&req).unwrap();
        assert_eq!(a, e.apply(&req).unwrap());
        assert_eq!(e.calls(), 2);
    }

    #[test]
    fn grid_editor_applies_and_rejects() {
        let e = GridEditor::new();
        let out = e
            .apply(&EditorRequest {
                image: payload("WW/WW"),
                instruction_text: "set 1 1 R".into(),
            })
            .unwrap();
        assert_eq!(out.image.to_image().unwrap().bytes(), b"RW/WW");
        assert_eq!((out.width, out.height), (2, 2));
        let err = e
            .apply(&EditorRequest {
                image: payload("WW/WW"),
                instruction_text: "paint the sky".into(),
            })
            .unwrap_err();
        assert!(matches!(err, BackendError::Remote { status: 422, .. }));
        assert!(!err.is_transient());
    }

    #[test]
    fn oracle_and_terminator() {
        let p = OraclePolicy::new();
        let r = p.step(&policy_req("WW/WW", "make cell (1,1) red")).unwrap();
        assert_eq!(r.instruction_text.as_deref(), Some("set 1 1 R"));
        let r = p.step(&policy_req("RW/WW", "make cell (1,1) red")).unwrap();
        assert_eq!(r.action, ActionKind::Stop);

        let t = GoalTerminator::new();
        let req = |g: &str| TerminatorRequest {
            current_image: payload(g),
            original_image: payload("WW/WW"),
            instruction: "make cell (1,1) red".into(),
        };
        assert_eq!(t.decide(&req("WW/WW")).unwrap().decision, Decision::Continue);
        assert_eq!(t.decide(&req("RW/WW")).unwrap().decision, Decision::Stop);
        assert_eq!(t.calls(), 2);
    }

    #[test]
    fn scorer() {
        let s = GridScorer::new();
        let r = s
            .score(&ScorerRequest {
                source_image: payload("WW/WW"),
                edited_image: payload("RW/WB"),
                instruction_text: "make cell (1,1) red".into(),
            })
            .unwrap();
        assert_eq!(r.scores.sc, 10.0);
        assert_eq!(r.scores.pq, 7.5);
    }

    #[test]
    fn flaky_then_ok() {
        let e = Flaky::new(GridEditor::new(), 2);
        let req = EditorRequest {
            image: payload("WW/WW"),
            instruction_text: "noop".into(),
        };
        assert!(e.apply(&req).unwrap_err().is_transient());
        assert!(e.apply(&req).is_err());
        assert!(e.apply(&req).is_ok());
    }

    #[test]
    fn factory_builds_every_kind() {
        for kind in MockKind::ALL {
            let b = make_mock_backend(kind, &MockSpec::default());
            let expected = match kind {
                MockKind::ScriptedPolicy | MockKind::OraclePolicy => matches!(b, MockBackend::Policy(_)),
                MockKind::GridEditor => matches!(b, MockBackend::Editor(_)),
                MockKind::GoalTerminator => matches!(b, MockBackend::Terminator(_)),
                MockKind::GridScorer => matches!(b, MockBackend::Scorer(_)),
            };
            assert!(expected, "{kind:?}");
            assert_eq!(kind.name().parse::<MockKind>().unwrap(), kind);
        }
        let spec = MockSpec {
            latency: Some(14.445),
            ..MockSpec::default()
        };
        let MockBackend::Editor(e) = make_mock_backend(MockKind::GridEditor, &spec) else {
            panic!()
        };
        assert_eq!(e.synthetic_latency(), Some(14.445));
    }
}
