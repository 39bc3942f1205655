//! Benchmark runs, budget sweeps and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ComplexInstruction, EpisodeId, ScoreTriple, Termination};
use crate::pipeline::score_outcome;
use crate::protocol::{ImagePayload, ScorerBackend};
use crate::runtime::{account_latency, run_episode, Backends, LatencyReport, LoopConfig, RuntimeError};

pub const BENCH_SCHEMA: &str = "mira-bench/1";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("budget list is empty")]
    NoBudgets,
    #[error("unknown report format {0:?}; expected text or jsonl")]
    UnknownFormat(String),
    #[error("could not build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

/// One benchmark input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSample {
    pub schema: String,
    pub sample_id: String,
    pub image: ImagePayload,
    pub instruction: String,
}

impl BenchmarkSample {
    pub fn new(sample_id: impl Into<String>, image: ImagePayload, instruction: impl Into<String>) -> Self {
        Self {
            schema: BENCH_SCHEMA.to_string(),
            sample_id: sample_id.into(),
            image,
            instruction: instruction.into(),
        }
    }
}

/// A named scorer column.
#[derive(Clone)]
pub struct NamedScorer {
    pub name: String,
    pub backend: Arc<dyn ScorerBackend>,
}

impl NamedScorer {
    pub fn new(name: impl Into<String>, backend: Arc<dyn ScorerBackend>) -> Self {
        Self {
            name: name.into(),
            backend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    pub termination: Option<Termination>,
    /// Loop iterations, stop steps included.
    pub steps: usize,
    pub edit_steps: usize,
    pub latency: Option<LatencyReport>,
    /// Score per scorer name; `None` when that scorer failed.
    pub scores: BTreeMap<String, Option<ScoreTriple>>,
    pub failed: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreMeans {
    /// Rows that contributed a score.
    pub n: usize,
    pub sc: f64,
    pub pq: f64,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub samples: usize,
    pub failures: usize,
    /// Means over samples that did not fail.
    pub mean_steps: f64,
    pub mean_edit_steps: f64,
    pub mean_latency_total: f64,
    pub scores: BTreeMap<String, ScoreMeans>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub max_steps: usize,
    pub retry_limit: usize,
    pub policy: String,
    pub editor: String,
    pub terminator: Option<String>,
    pub scorers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: ConfigSnapshot,
    pub rows: Vec<SampleRow>,
    pub aggregates: Aggregates,
    /// False when more than half of the samples failed.
    pub valid: bool,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Aggregates recomputed from per-sample rows.
pub fn aggregate_rows(rows: &[SampleRow], scorers: &[String]) -> Aggregates {
    let ok: Vec<&SampleRow> = rows.iter().filter(|r| !r.failed).collect();
    let scores = scorers
        .iter()
        .map(|name| {
            let triples: Vec<ScoreTriple> =
                ok.iter().filter_map(|r| r.scores.get(name).copied().flatten()).collect();
            (
                name.clone(),
                ScoreMeans {
                    n: triples.len(),
                    sc: mean(triples.iter().map(|t| t.sc)),
                    pq: mean(triples.iter().map(|t| t.pq)),
                    overall: mean(triples.iter().map(|t| t.overall)),
                },
            )
        })
        .collect();
    Aggregates {
        samples: rows.len(),
        failures: rows.len() - ok.len(),
        mean_steps: mean(ok.iter().map(|r| r.steps as f64)),
        mean_edit_steps: mean(ok.iter().map(|r| r.edit_steps as f64)),
        mean_latency_total: mean(ok.iter().filter_map(|r| r.latency.map(|l| l.total))),
        scores,
    }
}

fn in_pool<T: Send>(parallelism: usize, f: impl FnOnce() -> T + Send) -> Result<T, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

fn run_sample(
    sample: &BenchmarkSample,
    backends: &Backends,
    config: &LoopConfig,
    scorers: &[NamedScorer],
) -> SampleRow {
    let mut row = SampleRow {
        sample_id: sample.sample_id.clone(),
        termination: None,
        steps: 0,
        edit_steps: 0,
        latency: None,
        scores: scorers.iter().map(|s| (s.name.clone(), None)).collect(),
        failed: true,
        notes: Vec::new(),
    };
    let prepared = sample
        .image
        .to_image()
        .and_then(|img| ComplexInstruction::new(sample.instruction.clone()).map(|c| (img, c)));
    let (image, instruction) = match prepared {
        Ok(p) => p,
        Err(e) => {
            row.notes.push(format!("invalid sample: {e}"));
            return row;
        }
    };
    let outcome = match run_episode(EpisodeId::new(sample.sample_id.clone()), &image, &instruction, backends, config) {
        Ok(o) => o,
        Err(e) => {
            row.notes.push(e.to_string());
            return row;
        }
    };
    let t = &outcome.trajectory;
    row.termination = t.termination();
    row.steps = t.steps().len();
    row.edit_steps = t.edit_steps();
    match account_latency(t) {
        Ok(l) => row.latency = Some(l),
        Err(e) => row.notes.push(e.to_string()),
    }
    if t.termination() == Some(Termination::BackendError) {
        row.notes.push(t.failure().unwrap_or("backend error").to_string());
        return row;
    }
    row.failed = false;
    for s in scorers {
        match score_outcome(&image, &outcome, instruction.text(), std::slice::from_ref(&s.backend)) {
            Ok(score) => {
                row.scores.insert(s.name.clone(), Some(score));
            }
            Err(e) => row.notes.push(format!("scorer {}: {e}", s.name)),
        }
    }
    row
}

/// Runs one episode per sample, up to `parallelism` at a time, and scores
/// each final image with every scorer. Failures are recorded per row.
pub fn run_benchmark(
    samples: &[BenchmarkSample],
    backends: &Backends,
    config: &LoopConfig,
    scorers: &[NamedScorer],
    parallelism: usize,
) -> Result<BenchmarkReport, EvalError> {
    config.validate()?;
    let rows: Vec<SampleRow> =
        in_pool(parallelism, || samples.par_iter().map(|s| run_sample(s, backends, config, scorers)).collect())?;
    let names: Vec<String> = scorers.iter().map(|s| s.name.clone()).collect();
    let aggregates = aggregate_rows(&rows, &names);
    let valid = aggregates.failures * 2 <= aggregates.samples;
    Ok(BenchmarkReport {
        config: ConfigSnapshot {
            max_steps: config.max_steps,
            retry_limit: config.retry_limit,
            policy: backends.policy.id().to_string(),
            editor: backends.editor.id().to_string(),
            terminator: backends.terminator.as_ref().map(|t| t.id().to_string()),
            scorers: names,
        },
        rows,
        aggregates,
        valid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: usize,
    pub samples: usize,
    pub failures: usize,
    pub mean_steps: f64,
    pub mean_edit_steps: f64,
    pub stopped: usize,
    pub budget_exhausted: usize,
    pub valid: bool,
}

/// Mean steps actually taken at each step budget.
pub fn budget_sweep(
    samples: &[BenchmarkSample],
    backends: &Backends,
    budgets: &[usize],
    config: &LoopConfig,
    parallelism: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    if budgets.is_empty() {
        return Err(EvalError::NoBudgets);
    }
    budgets
        .iter()
        .map(|&budget| {
            let report = run_benchmark(samples, backends, &config.clone().with_max_steps(budget), &[], parallelism)?;
            let count = |t| report.rows.iter().filter(|r| !r.failed && r.termination == Some(t)).count();
            Ok(SweepRow {
                budget,
                samples: report.aggregates.samples,
                failures: report.aggregates.failures,
                mean_steps: report.aggregates.mean_steps,
                mean_edit_steps: report.aggregates.mean_edit_steps,
                stopped: count(Termination::Stopped),
                budget_exhausted: count(Termination::BudgetExhausted),
                valid: report.valid,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Jsonl,
}

impl std::str::FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "jsonl" => Ok(ReportFormat::Jsonl),
            other => Err(EvalError::UnknownFormat(other.to_string())),
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

/// Renders a report. Output depends only on the report value.
pub fn render_report(report: &BenchmarkReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(report),
        ReportFormat::Jsonl => render_jsonl(report),
    }
}

fn render_text(report: &BenchmarkReport) -> String {
    let scorers = &report.config.scorers;
    let mut header = vec!["sample".to_string(), "termination".into(), "steps".into()];
    for s in scorers {
        header.push(format!("SC[{s}]"));
        header.push(format!("PQ[{s}]"));
    }
    header.push("latency_s".into());

    let mut table: Vec<Vec<String>> = vec![header];
    for r in &report.rows {
        let mut line = vec![
            r.sample_id.clone(),
            r.termination
                .map(|t| serde_json::to_value(t).unwrap().as_str().unwrap().to_string())
                .unwrap_or_else(|| "-".into()),
            r.steps.to_string(),
        ];
        for s in scorers {
            let t = r.scores.get(s).copied().flatten();
            line.push(fmt_opt(t.map(|t| t.sc)));
            line.push(fmt_opt(t.map(|t| t.pq)));
        }
        line.push(fmt_opt(r.latency.map(|l| l.total)));
        if r.failed {
            line[1] = format!("{} (failed)", line[1]);
        }
        table.push(line);
    }
    let a = &report.aggregates;
    let mut mean_line = vec!["mean".to_string(), String::new(), format!("{:.3}", a.mean_steps)];
    for s in scorers {
        let m = a.scores.get(s).cloned().unwrap_or_default();
        mean_line.push(format!("{:.3}", m.sc));
        mean_line.push(format!("{:.3}", m.pq));
    }
    mean_line.push(format!("{:.3}", a.mean_latency_total));
    table.push(mean_line);

    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let n = table.len();
    for (i, row) in table.iter().enumerate() {
        if i == n - 1 || i == 1 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            writeln!(out, "{}", rule.join("  ")).unwrap();
        }
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 || c == 1 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
    }

    let recomputed = aggregate_rows(&report.rows, scorers);
    writeln!(out).unwrap();
    writeln!(
        out,
        "samples: {}  failures: {}  valid: {}  max_steps: {}",
        a.samples, a.failures, report.valid, report.config.max_steps
    )
    .unwrap();
    for s in scorers {
        let stored = a.scores.get(s).map(|m| m.sc).unwrap_or(0.0);
        let again = recomputed.scores.get(s).map(|m| m.sc).unwrap_or(0.0);
        writeln!(
            out,
            "check SC[{s}]: column mean {again:.6} vs reported {stored:.6} ({})",
            if again == stored { "ok" } else { "MISMATCH" }
        )
        .unwrap();
    }
    for r in report.rows.iter().filter(|r| !r.notes.is_empty()) {
        writeln!(out, "note {}: {}", r.sample_id, r.notes.join("; ")).unwrap();
    }
    out
}

fn render_jsonl(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let config = serde_json::json!({"type": "config", "config": report.config});
    writeln!(out, "{config}").unwrap();
    for r in &report.rows {
        let mut v = serde_json::to_value(r).unwrap();
        v.as_object_mut().unwrap().insert("type".into(), "sample".into());
        writeln!(out, "{v}").unwrap();
    }
    let agg = serde_json::json!({"type": "aggregate", "aggregates": report.aggregates, "valid": report.valid});
    writeln!(out, "{agg}").unwrap();
    out
}

/// Renders sweep rows as an aligned table.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::from("budget  mean_steps  mean_edits  stopped  exhausted  failures\n");
    for r in rows {
        writeln!(
            out,
            "{:>6}  {:>10.3}  {:>10.3}  {:>7}  {:>9}  {:>8}",
            r.budget, r.mean_steps, r.mean_edit_steps, r.stopped, r.budget_exhausted, r.failures
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_task;
    use crate::model::Image;
    use crate::protocol::mock::{GoalTerminator, GridEditor, GridScorer, OraclePolicy, Unreachable};

    fn oracle() -> Backends {
        Backends::new(
            Arc::new(OraclePolicy::new()),
            Arc::new(GridEditor::new()),
            Some(Arc::new(GoalTerminator::new())),
        )
    }

    fn samples(n: usize, goals: usize) -> Vec<BenchmarkSample> {
        (0..n as u64)
            .map(|i| {
                let task = random_task(i, 4, 4, goals, 0.0);
                BenchmarkSample::new(
                    format!("s{i}"),
                    ImagePayload::inline(&Image::from_grid(&task.grid)),
                    task.instruction(),
                )
            })
            .collect()
    }

    #[test]
    fn oracle_benchmark() {
        let scorers = [NamedScorer::new("grid", Arc::new(GridScorer::new()))];
        let report = run_benchmark(&samples(10, 2), &oracle(), &LoopConfig::default(), &scorers, 4).unwrap();
        assert!(report.valid);
        for r in &report.rows {
            assert_eq!(r.scores["grid"].unwrap().sc, 10.0);
            assert_eq!(r.steps, 3);
        }
        assert_eq!(report.aggregates, aggregate_rows(&report.rows, &report.config.scorers));
    }

    #[test]
    fn empty_benchmark_is_valid() {
        let report = run_benchmark(&[], &oracle(), &LoopConfig::default(), &[], 2).unwrap();
        assert!(report.valid);
        assert_eq!(report.aggregates.samples, 0);
    }

    #[test]
    fn unreachable_scorer_is_isolated() {
        let scorers = [
            NamedScorer::new("grid", Arc::new(GridScorer::new())),
            NamedScorer::new("down", Arc::new(Unreachable::new("down"))),
        ];
        let report = run_benchmark(&samples(3, 2), &oracle(), &LoopConfig::default(), &scorers, 2).unwrap();
        for r in &report.rows {
            assert!(r.scores["grid"].is_some());
            assert!(r.scores["down"].is_none());
            assert!(r.notes.iter().any(|n| n.contains("down")));
        }
        assert_eq!(report.aggregates.scores["down"].n, 0);
        assert!(report.valid);
    }

    #[test]
    fn majority_failures_invalidate() {
        let backends = Backends::new(Arc::new(Unreachable::new("p")), Arc::new(GridEditor::new()), None);
        let report = run_benchmark(&samples(3, 1), &backends, &LoopConfig::default(), &[], 1).unwrap();
        assert!(!report.valid);
        assert_eq!(report.aggregates.failures, 3);
    }

    #[test]
    fn sweeps() {
        let rows = budget_sweep(&samples(6, 3), &oracle(), &[5, 6, 7, 3], &LoopConfig::default(), 3).unwrap();
        for r in &rows[..3] {
            assert_eq!(r.mean_steps, 4.0);
        }
        assert_eq!(rows[3].mean_steps, 3.0);
        assert_eq!(rows[3].budget_exhausted, 6);
        assert!(matches!(
            budget_sweep(&[], &oracle(), &[], &LoopConfig::default(), 1),
            Err(EvalError::NoBudgets)
        ));
    }

    #[test]
    fn satisfied_tasks_stop_immediately() {
        let task = random_task(1, 4, 4, 2, 0.0);
        let done = crate::grid::open_loop_plan(&task.grid, &task.goals)
            .iter()
            .fold(task.grid.clone(), |g, op| op.apply(&g).unwrap());
        let sample = BenchmarkSample::new("done", ImagePayload::inline(&Image::from_grid(&done)), task.instruction());
        let rows = budget_sweep(&[sample], &oracle(), &[1], &LoopConfig::default(), 1).unwrap();
        assert_eq!(rows[0].mean_steps, 1.0);
    }

    #[test]
    fn rendering() {
        let scorers = [NamedScorer::new("grid", Arc::new(GridScorer::new()))];
        let report = run_benchmark(&samples(4, 2), &oracle(), &LoopConfig::default(), &scorers, 2).unwrap();
        let a = render_report(&report, ReportFormat::Text);
        assert_eq!(a, render_report(&report, ReportFormat::Text));
        assert_eq!(a.matches("SC[").count(), 2);
        assert!(a.contains("(ok)"));
        let j = render_report(&report, ReportFormat::Jsonl);
        assert_eq!(j.lines().count(), 6);
        assert!("html".parse::<ReportFormat>().is_err());
    }
}
