//! The `mira` command-line entry point.
//!
//! Settings resolve as flags, then environment, then an optional TOML file,
//! then built-in defaults. Exit status: 0 success, 1 usage, 2 backend
//! failure, 3 invalid data.

use std::fs;
use std::io::{self, Write};
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::Value;

use crate::eval::{self, BenchmarkSample, EvalError, NamedScorer, ReportFormat};
use crate::grpo::{self, EnvConfig, RewardWeights, TrainConfig, TrainError};
use crate::model::{
    ComplexInstruction, EpisodeId, Image, ModelError, Termination, TrajectoryStore, Violation,
};
use crate::pipeline::{
    self, CurateOptions, GenerationMode, PipelineError, Rewriter, SourceRecord, TableRewriter,
};
use crate::protocol::mock::{
    make_mock_backend, FaultConfig, GoalTerminator, GridEditor, GridScorer, MockBackend, MockKind,
    MockSpec, OraclePolicy,
};
use crate::protocol::{
    serve, validate_value, BackendError, ClientConfig, HttpBackend, SchemaId, ServerConfig, ENV_EDITOR_URL,
    ENV_POLICY_URL, ENV_SCORER_URL, ENV_TERMINATOR_URL, ENV_TIMEOUT_SECS,
};
use crate::runtime::{self, account_latency, Backends, LoopConfig, RuntimeError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("invalid data: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(e) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Config(m) => CliError::Usage(m),
            RuntimeError::Backend(e) => e.into(),
            RuntimeError::Model(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::EmptyPool { .. } => CliError::Backend(e.to_string()),
            PipelineError::Runtime(e) => e.into(),
            PipelineError::Model(e) => e.into(),
            PipelineError::Table(m) => CliError::Usage(format!("invalid rewrite table: {m}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Runtime(e) => e.into(),
            EvalError::Pool(m) => CliError::Usage(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Data(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mira", version, about = "Closed-loop instruction-guided editing toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Unset values fall through to the
/// environment, then the config file, then defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML file with default settings.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for episode-level parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_name = "URL")]
    pub policy_url: Option<String>,
    #[arg(long, global = true, value_name = "URL")]
    pub editor_url: Option<String>,
    #[arg(long, global = true, value_name = "URL")]
    pub terminator_url: Option<String>,
    #[arg(long, global = true, value_name = "URL")]
    pub scorer_url: Option<String>,
    /// Per-call timeout in seconds.
    #[arg(long, global = true)]
    pub timeout_secs: Option<f64>,
    #[arg(long, global = true)]
    pub bearer_token: Option<String>,
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    #[arg(long, global = true)]
    pub retry_limit: Option<usize>,
    /// Fault probability of the in-process mock editor.
    #[arg(long, global = true)]
    pub fault_rate: Option<f64>,
    /// Run without a terminator; only a policy stop ends an episode early.
    #[arg(long, global = true)]
    pub no_terminator: bool,
    /// Keep the policy's reasoning in the trajectory.
    #[arg(long, global = true)]
    pub record_reasoning: bool,
    /// Send previously executed instructions to the policy.
    #[arg(long, global = true)]
    pub forward_history: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop episode and print a trajectory summary.
    Run(RunArgs),
    /// Ask the policy for a single rewritten instruction.
    Refine(RefineArgs),
    /// Build a supervision dataset from multi-turn edit sources.
    Curate(CurateArgs),
    /// Cut stored trajectories into supervision records.
    Formulate(FormulateArgs),
    /// Train the toy step-wise GRPO policy and write its learning curve.
    TrainToy(TrainArgs),
    /// Run a benchmark and write a report.
    Eval(EvalArgs),
    /// Measure mean steps taken across step budgets.
    Sweep(SweepArgs),
    /// Serve in-process mock backends over HTTP on 127.0.0.1.
    ServeMock(ServeArgs),
    /// Check every record in an artifact file against its schema.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Image file: a symbol grid (rows separated by `/` or newlines) or a
    /// PNG/PNM raster.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub instruction: String,
    #[arg(long, default_value = "run")]
    pub episode_id: String,
    /// Append the trajectory to this store log.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub instruction: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    OneShot,
    Loop,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Line-delimited source records.
    #[arg(long)]
    pub input: PathBuf,
    /// Output samples; defaults to `<input stem>.samples.jsonl` beside the
    /// input.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub rewrites: Option<usize>,
    #[arg(long, value_enum, default_value = "one-shot")]
    pub mode: ModeArg,
    /// Rewrite table replacing the bundled one.
    #[arg(long)]
    pub rewrite_table: Option<PathBuf>,
    /// Also append the selected trajectories to this store log.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FormulateArgs {
    /// Trajectory store log.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Skip budget-exhausted trajectories instead of emitting their
    /// partial records.
    #[arg(long)]
    pub skip_partial: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lambda_sc: Option<f64>,
    #[arg(long)]
    pub lambda_pq: Option<f64>,
    #[arg(long)]
    pub tasks_per_iteration: Option<usize>,
    #[arg(long)]
    pub steps_per_task: Option<usize>,
    #[arg(long)]
    pub eval_tasks: Option<usize>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub goals: Option<usize>,
    #[arg(long)]
    pub absent_share: Option<f64>,
    /// Learning-curve output; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write the trained parameters as JSON.
    #[arg(long)]
    pub params_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Text,
    Jsonl,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Jsonl => ReportFormat::Jsonl,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Line-delimited benchmark samples.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    pub format: FormatArg,
    /// Report path; defaults to a timestamped name beside the input.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    pub budgets: Vec<usize>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 0)]
    pub port: u16,
    /// Mock kinds to serve, at most one per contract. Defaults to the oracle
    /// policy and the grid editor, terminator and scorer.
    #[arg(long, value_delimiter = ',', value_parser = parse_mock_kind)]
    pub kinds: Vec<MockKind>,
    /// Script entries for `scripted_policy`, in order.
    #[arg(long)]
    pub script: Vec<String>,
    /// Synthetic per-call latency in seconds.
    #[arg(long)]
    pub latency: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub file: PathBuf,
    /// Schema for records without a `schema` field, e.g. `mira-source/1`.
    #[arg(long)]
    pub schema: Option<String>,
}

fn parse_mock_kind(s: &str) -> Result<MockKind, String> {
    s.parse()
}

/// Optional settings file. Keys mirror the global flags; a `[train]` table
/// holds [`TrainConfig`] fields.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub policy_url: Option<String>,
    pub editor_url: Option<String>,
    pub terminator_url: Option<String>,
    pub scorer_url: Option<String>,
    pub timeout_secs: Option<f64>,
    pub bearer_token: Option<String>,
    pub max_steps: Option<usize>,
    pub retry_limit: Option<usize>,
    pub fault_rate: Option<f64>,
    pub no_terminator: Option<bool>,
    pub record_reasoning: Option<bool>,
    pub forward_history: Option<bool>,
    pub train: Option<TrainConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub jobs: usize,
    pub policy_url: Option<String>,
    pub editor_url: Option<String>,
    pub terminator_url: Option<String>,
    pub scorer_url: Option<String>,
    pub timeout_secs: f64,
    pub bearer_token: Option<String>,
    pub fault_rate: Option<f64>,
    pub no_terminator: bool,
    pub loop_config: LoopConfig,
    pub train: TrainConfig,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl Settings {
    /// Overlays flags on `env` on `file` on defaults.
    pub fn resolve(
        flags: &GlobalArgs,
        env: &dyn Fn(&str) -> Option<String>,
        file: &FileConfig,
    ) -> Result<Self, CliError> {
        let url = |flag: &Option<String>, var: &str, file: &Option<String>| {
            flag.clone().or_else(|| env(var).filter(|v| !v.is_empty())).or_else(|| file.clone())
        };
        let env_timeout = match env(ENV_TIMEOUT_SECS) {
            Some(v) => Some(
                v.parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("{ENV_TIMEOUT_SECS}={v:?} is not a number")))?,
            ),
            None => None,
        };
        let timeout_secs = flags.timeout_secs.or(env_timeout).or(file.timeout_secs).unwrap_or(60.0);
        if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
            return Err(CliError::Usage(format!("timeout must be positive, got {timeout_secs}")));
        }
        let fault_rate = flags.fault_rate.or(file.fault_rate);
        if let Some(p) = fault_rate {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Usage(format!("fault rate must lie in [0, 1], got {p}")));
            }
        }
        let jobs = flags.jobs.or(file.jobs).unwrap_or_else(default_jobs);
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        let defaults = LoopConfig::default();
        let loop_config = LoopConfig {
            max_steps: flags.max_steps.or(file.max_steps).unwrap_or(defaults.max_steps),
            per_call_timeout: Duration::from_secs_f64(timeout_secs),
            retry_limit: flags.retry_limit.or(file.retry_limit).unwrap_or(defaults.retry_limit),
            record_reasoning: flags.record_reasoning || file.record_reasoning.unwrap_or(false),
            forward_history: flags.forward_history || file.forward_history.unwrap_or(false),
        };
        loop_config.validate()?;
        let seed = flags.seed.or(file.seed).unwrap_or(0);
        let mut train = file.train.clone().unwrap_or_default();
        if flags.seed.is_some() || file.seed.is_some() {
            train.seed = seed;
        }
        Ok(Self {
            seed,
            jobs,
            policy_url: url(&flags.policy_url, ENV_POLICY_URL, &file.policy_url),
            editor_url: url(&flags.editor_url, ENV_EDITOR_URL, &file.editor_url),
            terminator_url: url(&flags.terminator_url, ENV_TERMINATOR_URL, &file.terminator_url),
            scorer_url: url(&flags.scorer_url, ENV_SCORER_URL, &file.scorer_url),
            timeout_secs,
            bearer_token: flags.bearer_token.clone().or_else(|| file.bearer_token.clone()),
            fault_rate,
            no_terminator: flags.no_terminator || file.no_terminator.unwrap_or(false),
            loop_config,
            train,
        })
    }

    fn client(&self, url: &str) -> Result<Arc<HttpBackend>, CliError> {
        let mut config = ClientConfig::new(url).with_timeout(Duration::from_secs_f64(self.timeout_secs));
        if let Some(token) = &self.bearer_token {
            config = config.with_bearer(token.clone());
        }
        Ok(Arc::new(HttpBackend::new(config)?))
    }

    /// Remote clients where a URL is configured, in-process grid mocks
    /// elsewhere.
    pub fn backends(&self) -> Result<Backends, CliError> {
        let policy: Arc<dyn crate::protocol::PolicyBackend> = match &self.policy_url {
            Some(u) => self.client(u)?,
            None => Arc::new(OraclePolicy::new()),
        };
        let editor: Arc<dyn crate::protocol::EditorBackend> = match &self.editor_url {
            Some(u) => self.client(u)?,
            None => Arc::new(match self.fault_rate {
                Some(rate) => GridEditor::with_faults(FaultConfig { rate, seed: self.seed }),
                None => GridEditor::new(),
            }),
        };
        let terminator: Option<Arc<dyn crate::protocol::TerminatorBackend>> = if self.no_terminator {
            None
        } else {
            Some(match &self.terminator_url {
                Some(u) => self.client(u)?,
                None => Arc::new(GoalTerminator::new()),
            })
        };
        Ok(Backends::new(policy, editor, terminator))
    }

    pub fn scorers(&self) -> Result<Vec<NamedScorer>, CliError> {
        Ok(vec![match &self.scorer_url {
            Some(u) => NamedScorer::new("remote", self.client(u)?),
            None => NamedScorer::new("grid", Arc::new(GridScorer::new())),
        }])
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// exit status. Reads the process environment.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    dispatch_with_env(argv, &|k| std::env::var(k).ok(), out, err)
}

pub fn dispatch_with_env<I, T>(
    argv: I,
    env: &dyn Fn(&str) -> Option<String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let rendered = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{rendered}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{rendered}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli, env, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "mira: {e}");
            e.exit_code()
        }
    }
}

/// Process entry point used by the `mira` binary.
pub fn main() -> i32 {
    let stdout = io::stdout();
    let stderr = io::stderr();
    dispatch(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn execute(
    cli: Cli,
    env: &dyn Fn(&str) -> Option<String>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<(), CliError> {
    let file = match &cli.global.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let settings = Settings::resolve(&cli.global, env, &file)?;
    match cli.command {
        Command::Run(a) => cmd_run(&settings, a, out, err),
        Command::Refine(a) => cmd_refine(&settings, a, out, err),
        Command::Curate(a) => cmd_curate(&settings, a, out, err),
        Command::Formulate(a) => cmd_formulate(a, out, err),
        Command::TrainToy(a) => cmd_train(&settings, a, out, err),
        Command::Eval(a) => cmd_eval(&settings, a, out),
        Command::Sweep(a) => cmd_sweep(&settings, a, out),
        Command::ServeMock(a) => cmd_serve(&settings, a, out),
        Command::Validate(a) => cmd_validate(a, out),
    }
}

fn io_err(e: io::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// Reads an image file. Text files are taken as symbol grids, with newlines
/// accepted as row separators.
pub fn load_image(path: &Path) -> Result<Image, CliError> {
    let bytes = read_input(path)?;
    if let Ok(text) = std::str::from_utf8(&bytes) {
        let rows: Vec<&str> = text.split(['\n', '\r', '/']).map(str::trim).filter(|r| !r.is_empty()).collect();
        if !rows.is_empty() {
            if let Ok(image) = Image::from_bytes(rows.join("/").into_bytes()) {
                return Ok(image);
            }
        }
    }
    Image::from_bytes(bytes)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn sibling(input: &Path, suffix: &str) -> PathBuf {
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    input.with_file_name(format!("{stem}.{suffix}"))
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn termination_name(t: Option<Termination>) -> &'static str {
    match t {
        Some(Termination::Stopped) => "stopped",
        Some(Termination::BudgetExhausted) => "budget_exhausted",
        Some(Termination::BackendError) => "backend_error",
        None => "running",
    }
}

fn cmd_run(s: &Settings, a: RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let image = load_image(&a.image)?;
    let instruction = ComplexInstruction::new(a.instruction)?;
    let backends = s.backends()?;
    let outcome = runtime::run_episode(
        EpisodeId::new(a.episode_id),
        &image,
        &instruction,
        &backends,
        &s.loop_config,
    )?;
    let t = &outcome.trajectory;
    if let Some(path) = &a.store {
        TrajectoryStore::open(path)?.write(t, &outcome.images)?;
    }
    let latency = account_latency(t).map(|r| r.total).unwrap_or(0.0);
    writeln!(
        out,
        "episode {}: {} after {} steps ({} edits), final {}, latency {:.3}s",
        t.episode_id(),
        termination_name(t.termination()),
        t.steps().len(),
        t.edit_steps(),
        &t.final_image().content_hash.to_hex()[..12],
        latency
    )
    .map_err(io_err)?;
    for step in t.steps() {
        writeln!(out, "  {}: {}", step.index, step.instruction.text()).map_err(io_err)?;
    }
    if let Ok(grid) = outcome.final_image().to_grid() {
        writeln!(out, "final grid: {}", grid.to_text()).map_err(io_err)?;
    }
    if t.termination() == Some(Termination::BackendError) {
        let reason = t.failure().unwrap_or("unknown failure").to_string();
        let _ = writeln!(err, "episode ended with a backend error");
        return Err(CliError::Backend(reason));
    }
    Ok(())
}

fn cmd_refine(s: &Settings, a: RefineArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let image = load_image(&a.image)?;
    let instruction = ComplexInstruction::new(a.instruction)?;
    let backends = s.backends()?;
    let r = runtime::refine_once(&image, &instruction, backends.policy.as_ref(), &s.loop_config)?;
    if let Some(w) = &r.warning {
        let _ = writeln!(err, "warning: {w}");
    }
    writeln!(out, "{}", r.instruction.text()).map_err(io_err)?;
    if let Some(reasoning) = &r.reasoning {
        writeln!(out, "reasoning: {reasoning}").map_err(io_err)?;
    }
    Ok(())
}

/// Parses JSON lines, returning every violation found with its line number.
fn parse_lines<T: serde::de::DeserializeOwned>(
    path: &Path,
    schema: SchemaId,
) -> Result<Vec<T>, CliError> {
    let bytes = read_input(path)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Data(format!("{} is not UTF-8", path.display())))?;
    let mut records = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                problems.push(format!("line {}: $: not valid JSON: {e}", i + 1));
                continue;
            }
        };
        let v = validate_value(&value, schema);
        if !v.is_empty() {
            problems.extend(v.iter().map(|v| format!("line {}: {v}", i + 1)));
            continue;
        }
        match serde_json::from_value(value) {
            Ok(r) => records.push(r),
            Err(e) => problems.push(format!("line {}: $: {e}", i + 1)),
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Data(format!("{}:\n  {}", path.display(), problems.join("\n  "))));
    }
    Ok(records)
}

fn to_jsonl<T: serde::Serialize>(records: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    buf
}

fn in_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map(|pool| pool.install(f))
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn cmd_curate(s: &Settings, a: CurateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let sources: Vec<SourceRecord> = parse_lines(&a.input, SchemaId::Source)?;
    let rewriter: Box<dyn Rewriter> = match &a.rewrite_table {
        Some(p) => {
            let text = String::from_utf8(read_input(p)?)
                .map_err(|_| CliError::Usage(format!("{} is not UTF-8", p.display())))?;
            Box::new(TableRewriter::from_toml(&text)?)
        }
        None => Box::new(TableRewriter::bundled()),
    };
    let opts = CurateOptions {
        n_permutations: a.permutations.unwrap_or(pipeline::DEFAULT_PERMUTATIONS),
        rewrites: a.rewrites.unwrap_or(pipeline::DEFAULT_REWRITES),
        seed: s.seed,
        mode: match a.mode {
            ModeArg::OneShot => GenerationMode::OneShot,
            ModeArg::Loop => GenerationMode::Loop,
        },
        loop_config: s.loop_config.clone(),
    };
    let backends = s.backends()?;
    let scorers: Vec<_> = s.scorers()?.into_iter().map(|n| n.backend).collect();
    let results = in_pool(s.jobs, || {
        sources
            .iter()
            .map(|src| pipeline::curate_source(src, rewriter.as_ref(), &backends, &scorers, &opts))
            .collect::<Vec<_>>()
    })?;
    let output = a.output.unwrap_or_else(|| sibling(&a.input, "samples.jsonl"));
    let blobs = crate::model::BlobStore::new(output.with_file_name("blobs"));
    let store = a.store.as_deref().map(TrajectoryStore::open).transpose()?;
    let mut records = Vec::new();
    let mut curated = 0;
    let mut backend_failures = Vec::new();
    for (src, result) in sources.iter().zip(results) {
        let c = match result {
            Ok(c) => c,
            Err(e) => {
                let _ = writeln!(err, "{}: {e}", src.source_id);
                backend_failures.push(src.source_id.clone());
                continue;
            }
        };
        for w in &c.warnings {
            let _ = writeln!(err, "{}: {w}", c.source_id);
        }
        let outcome = &c.selected.outcome;
        for r in outcome.trajectory.image_refs().iter().chain([outcome.trajectory.original_image()]) {
            if let Some(img) = outcome.images.get(&r.content_hash) {
                blobs.put(img)?;
            }
        }
        if let Some(store) = &store {
            store.write(&outcome.trajectory, &outcome.images)?;
        }
        records.extend(pipeline::formulate_samples(&outcome.trajectory)?.records);
        curated += 1;
    }
    write_output(&output, &to_jsonl(&records))?;
    writeln!(
        out,
        "curated {curated} of {} sources into {} samples: {}",
        sources.len(),
        records.len(),
        output.display()
    )
    .map_err(io_err)?;
    if curated == 0 && !sources.is_empty() {
        return Err(CliError::Backend(format!("every source failed: {}", backend_failures.join(", "))));
    }
    Ok(())
}

fn cmd_formulate(a: FormulateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    if !a.store.exists() {
        return Err(CliError::Usage(format!("no store at {}", a.store.display())));
    }
    let store = TrajectoryStore::open(&a.store)?;
    let mut records = Vec::new();
    let mut skipped = 0;
    for t in store.read_all()? {
        match pipeline::formulate_samples(&t) {
            Ok(f) if f.partial && a.skip_partial => skipped += 1,
            Ok(f) => records.extend(f.records),
            Err(e) => {
                skipped += 1;
                let _ = writeln!(err, "{}: {e}", t.episode_id());
            }
        }
    }
    let output = a.output.unwrap_or_else(|| sibling(&a.store, "samples.jsonl"));
    write_output(&output, &to_jsonl(&records))?;
    writeln!(out, "{} samples ({skipped} trajectories skipped): {}", records.len(), output.display())
        .map_err(io_err)?;
    Ok(())
}

/// Applies train-toy flags over the resolved (file or default) config.
pub fn train_config(s: &Settings, a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let base = s.train.clone();
    let weights = RewardWeights::new(
        a.lambda_sc.unwrap_or(base.weights.sc),
        a.lambda_pq.unwrap_or(base.weights.pq),
    )?;
    Ok(TrainConfig {
        k: a.k.unwrap_or(base.k),
        beta: a.beta.unwrap_or(base.beta),
        learning_rate: a.learning_rate.unwrap_or(base.learning_rate),
        iterations: a.iterations.unwrap_or(base.iterations),
        seed: base.seed,
        weights,
        tasks_per_iteration: a.tasks_per_iteration.unwrap_or(base.tasks_per_iteration),
        steps_per_task: a.steps_per_task.unwrap_or(base.steps_per_task),
        eval_tasks: a.eval_tasks.unwrap_or(base.eval_tasks),
        env: EnvConfig {
            rows: a.rows.unwrap_or(base.env.rows),
            cols: a.cols.unwrap_or(base.env.cols),
            goals: a.goals.unwrap_or(base.env.goals),
            absent_share: a.absent_share.unwrap_or(base.env.absent_share),
        },
    })
}

fn cmd_train(s: &Settings, a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = train_config(s, &a)?;
    let result = grpo::train_toy(&config)?;
    let curve = to_jsonl(&result.curve);
    match &a.output {
        Some(p) => write_output(p, &curve)?,
        None => out.write_all(&curve).map_err(io_err)?,
    }
    if let Some(p) = &a.params_out {
        let json = serde_json::to_vec_pretty(&result.params).expect("params serialize");
        write_output(p, &json)?;
    }
    if let (Some(first), Some(last)) = (result.curve.first(), result.curve.last()) {
        let _ = writeln!(
            err,
            "mean reward {:.4} -> {:.4} over {} iterations (kl {:.4})",
            first.mean_reward, last.mean_reward, last.iteration, last.kl_to_ref
        );
    }
    Ok(())
}

fn cmd_eval(s: &Settings, a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let samples: Vec<BenchmarkSample> = parse_lines(&a.input, SchemaId::Bench)?;
    let backends = s.backends()?;
    let scorers = s.scorers()?;
    let report = eval::run_benchmark(&samples, &backends, &s.loop_config, &scorers, s.jobs)?;
    let format = ReportFormat::from(a.format);
    let rendered = eval::render_report(&report, format);
    let ext = match format {
        ReportFormat::Text => "txt",
        ReportFormat::Jsonl => "jsonl",
    };
    let output = a.output.unwrap_or_else(|| sibling(&a.input, &format!("report-{}.{ext}", timestamp())));
    write_output(&output, rendered.as_bytes())?;
    out.write_all(rendered.as_bytes()).map_err(io_err)?;
    writeln!(out, "report: {}", output.display()).map_err(io_err)?;
    if !report.valid {
        return Err(CliError::Backend(format!(
            "{} of {} samples failed; report marked invalid",
            report.aggregates.failures, report.aggregates.samples
        )));
    }
    Ok(())
}

fn cmd_sweep(s: &Settings, a: SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let samples: Vec<BenchmarkSample> = parse_lines(&a.input, SchemaId::Bench)?;
    let backends = s.backends()?;
    let rows = eval::budget_sweep(&samples, &backends, &a.budgets, &s.loop_config, s.jobs)?;
    let rendered = eval::render_sweep(&rows);
    let output = a.output.unwrap_or_else(|| sibling(&a.input, &format!("sweep-{}.txt", timestamp())));
    write_output(&output, rendered.as_bytes())?;
    out.write_all(rendered.as_bytes()).map_err(io_err)?;
    writeln!(out, "report: {}", output.display()).map_err(io_err)?;
    if rows.iter().any(|r| !r.valid) {
        return Err(CliError::Backend("more than half of the samples failed at some budget".into()));
    }
    Ok(())
}

/// Builds a server config from mock kinds, rejecting two mocks for one
/// contract.
pub fn mock_server_config(kinds: &[MockKind], spec: &MockSpec) -> Result<ServerConfig, CliError> {
    let mut config = ServerConfig {
        policy: None,
        editor: None,
        terminator: None,
        scorer: None,
    };
    fn fill<T: ?Sized>(slot: &mut Option<Arc<T>>, b: Arc<T>, kind: MockKind) -> Result<(), CliError> {
        if slot.is_some() {
            return Err(CliError::Usage(format!("{} duplicates an already served contract", kind.name())));
        }
        *slot = Some(b);
        Ok(())
    }
    for &kind in kinds {
        match make_mock_backend(kind, spec) {
            MockBackend::Policy(b) => fill(&mut config.policy, b, kind)?,
            MockBackend::Editor(b) => fill(&mut config.editor, b, kind)?,
            MockBackend::Terminator(b) => fill(&mut config.terminator, b, kind)?,
            MockBackend::Scorer(b) => fill(&mut config.scorer, b, kind)?,
        }
    }
    Ok(config)
}

fn cmd_serve(s: &Settings, a: ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let kinds = if a.kinds.is_empty() {
        vec![
            MockKind::OraclePolicy,
            MockKind::GridEditor,
            MockKind::GoalTerminator,
            MockKind::GridScorer,
        ]
    } else {
        a.kinds
    };
    let spec = MockSpec {
        script: a.script,
        fault: s.fault_rate.map(|rate| FaultConfig { rate, seed: s.seed }),
        latency: a.latency,
    };
    let config = mock_server_config(&kinds, &spec)?;
    let handle = serve(config, SocketAddr::from((Ipv4Addr::LOCALHOST, a.port)))
        .map_err(|e| CliError::Usage(format!("cannot bind port {}: {e}", a.port)))?;
    let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
    writeln!(out, "listening on {} ({})", handle.base_url(), names.join(", ")).map_err(io_err)?;
    out.flush().map_err(io_err)?;
    handle.wait();
    Ok(())
}

/// Validates every record of `text`: a single JSON document or JSON lines.
/// Each record's schema comes from `schema` or its own `schema` field.
pub fn validate_artifact(text: &str, schema: Option<SchemaId>) -> Vec<(usize, Violation)> {
    let trimmed = text.trim();
    let docs: Vec<(usize, Result<Value, String>)> = match serde_json::from_str::<Value>(trimmed) {
        Ok(v) if !trimmed.is_empty() => vec![(1, Ok(v))],
        _ => text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, serde_json::from_str(l).map_err(|e| e.to_string())))
            .collect(),
    };
    let mut out = Vec::new();
    for (line, doc) in docs {
        let value = match doc {
            Ok(v) => v,
            Err(e) => {
                out.push((line, Violation::new("$", format!("not valid JSON: {e}"))));
                continue;
            }
        };
        let Some(id) = schema.or_else(|| SchemaId::of_record(&value)) else {
            out.push((line, Violation::new("schema", "missing or unknown; pass --schema")));
            continue;
        };
        out.extend(validate_value(&value, id).into_iter().map(|v| (line, v)));
    }
    out
}

fn cmd_validate(a: ValidateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let schema = a
        .schema
        .as_deref()
        .map(|s| s.parse::<SchemaId>().map_err(|e| CliError::Usage(e.to_string())))
        .transpose()?;
    let bytes = read_input(&a.file)?;
    let text = String::from_utf8(bytes).map_err(|_| CliError::Data(format!("{} is not UTF-8", a.file.display())))?;
    let violations = validate_artifact(&text, schema);
    for (line, v) in &violations {
        writeln!(out, "{}:{line}: {v}", a.file.display()).map_err(io_err)?;
    }
    if violations.is_empty() {
        writeln!(out, "{}: ok", a.file.display()).map_err(io_err)?;
        Ok(())
    } else {
        Err(CliError::Data(format!("{} violations in {}", violations.len(), a.file.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn precedence_flags_env_file_defaults() {
        let file = FileConfig {
            policy_url: Some("http://file".into()),
            editor_url: Some("http://file-editor".into()),
            timeout_secs: Some(7.0),
            max_steps: Some(9),
            ..FileConfig::default()
        };
        let env = |k: &str| match k {
            ENV_POLICY_URL => Some("http://env".to_string()),
            ENV_TIMEOUT_SECS => Some("3".to_string()),
            _ => None,
        };
        let flags = GlobalArgs {
            policy_url: Some("http://flag".into()),
            ..GlobalArgs::default()
        };
        let s = Settings::resolve(&flags, &env, &file).unwrap();
        assert_eq!(s.policy_url.as_deref(), Some("http://flag"));
        assert_eq!(s.editor_url.as_deref(), Some("http://file-editor"));
        assert_eq!(s.timeout_secs, 3.0);
        assert_eq!(s.loop_config.max_steps, 9);
        assert_eq!(s.terminator_url, None);

        let s = Settings::resolve(&GlobalArgs::default(), &no_env, &FileConfig::default()).unwrap();
        assert_eq!(s.loop_config, LoopConfig::default());
        assert_eq!(s.seed, 0);
    }

    #[test]
    fn unknown_flags_and_config_keys_are_usage_errors() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(dispatch_with_env(["mira", "run", "--bogus"], &no_env, &mut out, &mut err), EXIT_USAGE);
        assert!(toml::from_str::<FileConfig>("nonsense = 1").is_err());
        assert!(toml::from_str::<FileConfig>("seed = 4\n[train]\nk = 4").is_ok());
    }

    #[test]
    fn bad_settings_are_rejected() {
        let flags = GlobalArgs {
            retry_limit: Some(99),
            ..GlobalArgs::default()
        };
        assert!(matches!(
            Settings::resolve(&flags, &no_env, &FileConfig::default()),
            Err(CliError::Usage(_))
        ));
        let env = |k: &str| (k == ENV_TIMEOUT_SECS).then(|| "soon".to_string());
        assert!(Settings::resolve(&GlobalArgs::default(), &env, &FileConfig::default()).is_err());
    }

    #[test]
    fn duplicate_mock_contracts_rejected() {
        let spec = MockSpec::default();
        assert!(mock_server_config(&[MockKind::OraclePolicy, MockKind::ScriptedPolicy], &spec).is_err());
        let c = mock_server_config(&[MockKind::GridEditor], &spec).unwrap();
        assert!(c.editor.is_some() && c.policy.is_none());
    }

    #[test]
    fn validate_reports_missing_schema() {
        let v = validate_artifact("{\"source_id\":\"a\"}\n", None);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].1.path, "schema");
        assert!(validate_artifact("not json\n", None)[0].1.message.contains("not valid JSON"));
    }
}
