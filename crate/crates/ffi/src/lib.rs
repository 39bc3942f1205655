//! C ABI over `mira-core`: run closed-loop episodes against mock or remote
//! backends, inspect the resulting trajectories, persist them to a store and
//! score symbol grids.
//!
//! Every fallible call returns a [`MiraStatus`]. On failure the message is
//! available from [`mira_last_error`] on the same thread. Strings returned as
//! `char *` are owned by the caller and must be released with
//! [`mira_string_free`]; handles are released with their own `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;
use std::time::Duration;

use mira_core::model::{ComplexInstruction, EpisodeId, Image, ModelError, Termination, TrajectoryStore};
use mira_core::protocol::mock::{FaultConfig, GoalTerminator, GridEditor, GridScorer, OraclePolicy};
use mira_core::protocol::{
    validate_message, BackendError, ClientConfig, HttpBackend, ImagePayload, SchemaId, ScorerBackend,
    ScorerRequest, TerminatorBackend,
};
use mira_core::runtime::{account_latency, run_episode, Backends, EpisodeOutcome, LoopConfig, RuntimeError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiraStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    BackendFailure = 4,
    InvalidData = 5,
    Io = 6,
    NotFound = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiraTermination {
    Stopped = 0,
    BudgetExhausted = 1,
    BackendError = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MiraScores {
    pub sc: f64,
    pub pq: f64,
    pub overall: f64,
}

/// Backend clients plus loop settings.
pub struct MiraRuntime {
    backends: Backends,
    config: LoopConfig,
}

/// A finished episode with its image payloads.
pub struct MiraEpisode {
    outcome: EpisodeOutcome,
}

/// An append-only trajectory store.
pub struct MiraStore {
    store: TrajectoryStore,
}

struct Failure {
    status: MiraStatus,
    message: String,
}

impl Failure {
    fn new(status: MiraStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::Io(_) => MiraStatus::Io,
            ModelError::NotFound(_) => MiraStatus::NotFound,
            _ => MiraStatus::InvalidData,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        Failure::new(MiraStatus::BackendFailure, e.to_string())
    }
}

impl From<RuntimeError> for Failure {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Config(m) => Failure::new(MiraStatus::InvalidArgument, m),
            RuntimeError::Backend(e) => e.into(),
            RuntimeError::Model(e) => e.into(),
            other => Failure::new(MiraStatus::InvalidData, other.to_string()),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MiraStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MiraStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(_) => {
            set_last_error("panic inside mira");
            MiraStatus::Panic
        }
    }
}

/// Runs `f` and converts its string result to an owned C string; NULL on
/// failure, with the reason in the last error.
fn string_result(f: impl FnOnce() -> Result<String, Failure>) -> *mut c_char {
    let mut out = ptr::null_mut();
    guard(|| {
        let s = f()?;
        out = CString::new(s)
            .map_err(|_| Failure::new(MiraStatus::InvalidData, "string contains a NUL byte"))?
            .into_raw();
        Ok(())
    });
    out
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(MiraStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(MiraStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(MiraStatus::NullPointer, format!("{name} is NULL")))
}

fn out_ptr<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(MiraStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

fn loop_config(max_steps: usize, timeout_secs: f64) -> Result<LoopConfig, Failure> {
    if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
        return Err(Failure::new(MiraStatus::InvalidArgument, "timeout must be positive"));
    }
    let config = LoopConfig {
        per_call_timeout: Duration::from_secs_f64(timeout_secs),
        ..LoopConfig::default()
    }
    .with_max_steps(max_steps);
    config.validate()?;
    Ok(config)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mira_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mira_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates a runtime backed by the in-process grid mocks. A negative
/// `fault_rate` disables editor faults.
///
/// # Safety
/// `out` must point to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mira_runtime_new_mock(
    max_steps: usize,
    fault_rate: f64,
    seed: u64,
    out: *mut *mut MiraRuntime,
) -> MiraStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let editor = if fault_rate < 0.0 {
            GridEditor::new()
        } else if fault_rate <= 1.0 {
            GridEditor::with_faults(FaultConfig { rate: fault_rate, seed })
        } else {
            return Err(Failure::new(MiraStatus::InvalidArgument, "fault_rate above 1"));
        };
        let runtime = MiraRuntime {
            backends: Backends::new(
                Arc::new(OraclePolicy::new()),
                Arc::new(editor),
                Some(Arc::new(GoalTerminator::new())),
            ),
            config: loop_config(max_steps, 60.0)?,
        };
        *out = Box::into_raw(Box::new(runtime));
        Ok(())
    })
}

/// Creates a runtime that talks to remote backends. `terminator_url` may be
/// NULL, in which case only a policy stop ends an episode early.
///
/// # Safety
/// URL arguments must be NULL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mira_runtime_new_remote(
    policy_url: *const c_char,
    editor_url: *const c_char,
    terminator_url: *const c_char,
    timeout_secs: f64,
    max_steps: usize,
    out: *mut *mut MiraRuntime,
) -> MiraStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let config = loop_config(max_steps, timeout_secs)?;
        let client = |url: &str| -> Result<Arc<HttpBackend>, Failure> {
            let c = ClientConfig::new(url).with_timeout(config.per_call_timeout);
            Ok(Arc::new(HttpBackend::new(c)?))
        };
        let policy = client(str_arg(policy_url, "policy_url")?)?;
        let editor = client(str_arg(editor_url, "editor_url")?)?;
        let terminator = match opt_str_arg(terminator_url, "terminator_url")? {
            Some(u) => Some(client(u)? as Arc<dyn TerminatorBackend>),
            None => None,
        };
        let runtime = MiraRuntime {
            backends: Backends::new(policy, editor, terminator),
            config,
        };
        *out = Box::into_raw(Box::new(runtime));
        Ok(())
    })
}

/// # Safety
/// `rt` must be NULL or a handle from a `mira_runtime_new_*` call.
#[no_mangle]
pub unsafe extern "C" fn mira_runtime_free(rt: *mut MiraRuntime) {
    if !rt.is_null() {
        drop(Box::from_raw(rt));
    }
}

/// Runs one episode. A backend failure during the loop still yields an
/// episode, terminated with `BackendError`.
///
/// # Safety
/// `image` must point to `image_len` readable bytes; string arguments must
/// be NULL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mira_runtime_run(
    rt: *const MiraRuntime,
    image: *const u8,
    image_len: usize,
    instruction: *const c_char,
    episode_id: *const c_char,
    out: *mut *mut MiraEpisode,
) -> MiraStatus {
    guard(|| {
        let rt = handle(rt, "runtime")?;
        out_ptr(out, "out")?;
        if image.is_null() {
            return Err(Failure::new(MiraStatus::NullPointer, "image is NULL"));
        }
        let bytes = std::slice::from_raw_parts(image, image_len).to_vec();
        let image = Image::from_bytes(bytes)?;
        let instruction = ComplexInstruction::new(str_arg(instruction, "instruction")?)?;
        let id = EpisodeId::new(str_arg(episode_id, "episode_id")?);
        let outcome = run_episode(id, &image, &instruction, &rt.backends, &rt.config)?;
        *out = Box::into_raw(Box::new(MiraEpisode { outcome }));
        Ok(())
    })
}

/// # Safety
/// `ep` must be NULL or a handle from [`mira_runtime_run`].
#[no_mangle]
pub unsafe extern "C" fn mira_episode_free(ep: *mut MiraEpisode) {
    if !ep.is_null() {
        drop(Box::from_raw(ep));
    }
}

/// # Safety
/// `ep` must be a live episode handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mira_episode_termination(
    ep: *const MiraEpisode,
    out: *mut MiraTermination,
) -> MiraStatus {
    guard(|| {
        let ep = handle(ep, "episode")?;
        out_ptr(out, "out")?;
        *out = match ep.outcome.trajectory.termination() {
            Some(Termination::Stopped) => MiraTermination::Stopped,
            Some(Termination::BudgetExhausted) => MiraTermination::BudgetExhausted,
            Some(Termination::BackendError) | None => MiraTermination::BackendError,
        };
        Ok(())
    })
}

/// Number of steps, the stop step included; 0 for a NULL handle.
///
/// # Safety
/// `ep` must be NULL or a live episode handle.
#[no_mangle]
pub unsafe extern "C" fn mira_episode_step_count(ep: *const MiraEpisode) -> usize {
    ep.as_ref().map_or(0, |e| e.outcome.trajectory.steps().len())
}

/// # Safety
/// `ep` must be NULL or a live episode handle.
#[no_mangle]
pub unsafe extern "C" fn mira_episode_edit_count(ep: *const MiraEpisode) -> usize {
    ep.as_ref().map_or(0, |e| e.outcome.trajectory.edit_steps())
}

/// Instruction text of the step at 0-based `index`, or NULL.
///
/// # Safety
/// `ep` must be a live episode handle.
#[no_mangle]
pub unsafe extern "C" fn mira_episode_step_instruction(ep: *const MiraEpisode, index: usize) -> *mut c_char {
    string_result(|| {
        let ep = handle(ep, "episode")?;
        ep.outcome
            .trajectory
            .steps()
            .get(index)
            .map(|s| s.instruction.text().to_string())
            .ok_or_else(|| Failure::new(MiraStatus::InvalidArgument, format!("no step at index {index}")))
    })
}

/// Borrows the final image payload. The bytes live as long as the episode.
///
/// # Safety
/// `ep` must be a live episode handle; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mira_episode_final_image(
    ep: *const MiraEpisode,
    data: *mut *const u8,
    len: *mut usize,
) -> MiraStatus {
    guard(|| {
        let ep = handle(ep, "episode")?;
        out_ptr(data, "data")?;
        out_ptr(len, "len")?;
        let bytes = ep.outcome.final_image().bytes();
        *data = bytes.as_ptr();
        *len = bytes.len();
        Ok(())
    })
}

/// Sum of policy and editor latency in seconds.
///
/// # Safety
/// `ep` must be a live episode handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mira_episode_total_latency(ep: *const MiraEpisode, out: *mut f64) -> MiraStatus {
    guard(|| {
        let ep = handle(ep, "episode")?;
        out_ptr(out, "out")?;
        *out = account_latency(&ep.outcome.trajectory)?.total;
        Ok(())
    })
}

/// The trajectory as a JSON document.
///
/// # Safety
/// `ep` must be a live episode handle.
#[no_mangle]
pub unsafe extern "C" fn mira_episode_to_json(ep: *const MiraEpisode) -> *mut c_char {
    string_result(|| {
        let ep = handle(ep, "episode")?;
        serde_json::to_string(&ep.outcome.trajectory).map_err(|e| Failure::new(MiraStatus::InvalidData, e.to_string()))
    })
}

/// Opens or creates a store log at `path`; payloads go to a sibling
/// `blobs/` directory.
///
/// # Safety
/// `path` must be a NULL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mira_store_open(path: *const c_char, out: *mut *mut MiraStore) -> MiraStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let store = TrajectoryStore::open(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(MiraStore { store }));
        Ok(())
    })
}

/// # Safety
/// `store` must be NULL or a handle from [`mira_store_open`].
#[no_mangle]
pub unsafe extern "C" fn mira_store_free(store: *mut MiraStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Appends a terminated episode and its payloads.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn mira_store_write(store: *const MiraStore, ep: *const MiraEpisode) -> MiraStatus {
    guard(|| {
        let store = handle(store, "store")?;
        let ep = handle(ep, "episode")?;
        store.store.write(&ep.outcome.trajectory, &ep.outcome.images)?;
        Ok(())
    })
}

/// # Safety
/// `store` must be NULL or a live store handle.
#[no_mangle]
pub unsafe extern "C" fn mira_store_len(store: *const MiraStore) -> usize {
    store.as_ref().map_or(0, |s| s.store.len())
}

/// The stored trajectory with `episode_id` as JSON, or NULL.
///
/// # Safety
/// `store` must be a live store handle; `episode_id` NULL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mira_store_read_json(store: *const MiraStore, episode_id: *const c_char) -> *mut c_char {
    string_result(|| {
        let store = handle(store, "store")?;
        let t = store.store.read(&EpisodeId::new(str_arg(episode_id, "episode_id")?))?;
        serde_json::to_string(&t).map_err(|e| Failure::new(MiraStatus::InvalidData, e.to_string()))
    })
}

/// Scores an edit of symbol grid `source` into `edited` (both in `RRW/WWK`
/// form) against `instruction` with the reference grid scorer.
///
/// # Safety
/// String arguments must be NULL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mira_score_grid(
    source: *const c_char,
    edited: *const c_char,
    instruction: *const c_char,
    out: *mut MiraScores,
) -> MiraStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let grid = |p, name| -> Result<Image, Failure> {
            Ok(Image::from_bytes(str_arg(p, name)?.as_bytes().to_vec())?)
        };
        let req = ScorerRequest {
            source_image: ImagePayload::inline(&grid(source, "source")?),
            edited_image: ImagePayload::inline(&grid(edited, "edited")?),
            instruction_text: str_arg(instruction, "instruction")?.to_string(),
        };
        let s = GridScorer::new().score(&req)?.scores;
        *out = MiraScores {
            sc: s.sc,
            pq: s.pq,
            overall: s.overall,
        };
        Ok(())
    })
}

/// Validates a JSON document against a named schema such as
/// `mira-trajectory/1`. Writes the number of violations to `violations`;
/// the first one is also the last error.
///
/// # Safety
/// String arguments must be NULL-terminated and `violations` writable.
#[no_mangle]
pub unsafe extern "C" fn mira_validate_json(
    schema: *const c_char,
    json: *const c_char,
    violations: *mut usize,
) -> MiraStatus {
    guard(|| {
        out_ptr(violations, "violations")?;
        let id: SchemaId = str_arg(schema, "schema")?
            .parse()
            .map_err(|e: mira_core::protocol::UnknownSchema| Failure::new(MiraStatus::InvalidArgument, e.to_string()))?;
        match validate_message(str_arg(json, "json")?.as_bytes(), id) {
            Ok(()) => {
                *violations = 0;
                Ok(())
            }
            Err(v) => {
                *violations = v.len();
                Err(Failure::new(MiraStatus::InvalidData, v[0].to_string()))
            }
        }
    })
}
