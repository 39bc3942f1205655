//! Dataset curation: merge atomic edit sequences into complex instructions,
//! paraphrase them, execute candidates, keep the best one, and cut the winner
//! into per-step supervision records.

use std::collections::HashSet;
use std::sync::{Arc, LazyLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{
    AtomicInstruction, ComplexInstruction, ContentHash, EpisodeId, Image, ImageRef, ImageSet,
    ModelError, ScoreTriple, Termination, Trajectory, Violation,
};
use crate::protocol::mock::GridEditor;
use crate::protocol::{BackendError, ImagePayload, ScorerBackend, ScorerRequest};
use crate::runtime::{run_episode, run_plan, Backends, EpisodeOutcome, LoopConfig, RuntimeError};

pub const SAMPLE_SCHEMA: &str = "mira-sample/1";
/// Name of the input record format; source lines carry no `schema` field.
pub const SOURCE_SCHEMA: &str = "mira-source/1";

pub const DEFAULT_REWRITES: usize = 3;
pub const DEFAULT_PERMUTATIONS: usize = 2;
pub const AGGREGATE_CONNECTIVE: &str = " then ";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("atomic edit sequence is empty")]
    EmptySequence,
    #[error("rewrite {index} failed: {message}")]
    Rewrite { index: usize, message: String },
    #[error("no candidate survived for {source_id}: {}", failures.join("; "))]
    EmptyPool { source_id: String, failures: Vec<String> },
    #[error("trajectory cannot be formulated: {0}")]
    NotFormulable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("invalid rewrite table: {0}")]
    Table(String),
}

/// Ordered atomic edits from one multi-turn source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicEditSequence {
    pub source_id: String,
    pub atomic_edits: Vec<String>,
}

impl AtomicEditSequence {
    pub fn new(source_id: impl Into<String>, atomic_edits: Vec<String>) -> Result<Self, PipelineError> {
        if atomic_edits.is_empty() {
            return Err(PipelineError::EmptySequence);
        }
        Ok(Self {
            source_id: source_id.into(),
            atomic_edits,
        })
    }
}

/// One line of a curation input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_id: String,
    pub image: ImagePayload,
    pub atomic_edits: Vec<String>,
}

impl SourceRecord {
    pub fn sequence(&self) -> Result<AtomicEditSequence, PipelineError> {
        AtomicEditSequence::new(self.source_id.clone(), self.atomic_edits.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum OrderTag {
    InOrder,
    Permuted(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum RewriteTag {
    Original,
    Rewritten(usize),
}

/// A complex instruction built from a source's atomic edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionVariant {
    pub text: ComplexInstruction,
    /// The atomic texts the variant was built from, in variant order.
    pub atomics: Vec<String>,
    pub order: OrderTag,
    pub rewrite: RewriteTag,
}

fn join_atomics(atomics: &[String], connective: &str) -> Result<ComplexInstruction, ModelError> {
    ComplexInstruction::new(atomics.join(connective))
}

/// Result of [`aggregate`]: the in-order variant first, then permutations.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub variants: Vec<InstructionVariant>,
    /// Set when fewer permutations exist than were requested.
    pub warning: Option<String>,
}

fn distinct_orderings(len: usize) -> usize {
    (1..=len).try_fold(1usize, |acc, k| acc.checked_mul(k)).unwrap_or(usize::MAX) - 1
}

/// Builds the in-order variant plus `n_permutations` distinct seeded
/// reorderings, each joined with [`AGGREGATE_CONNECTIVE`].
pub fn aggregate(seq: &AtomicEditSequence, n_permutations: usize, seed: u64) -> Result<Aggregation, PipelineError> {
    if seq.atomic_edits.is_empty() {
        return Err(PipelineError::EmptySequence);
    }
    let available = distinct_orderings(seq.atomic_edits.len());
    let n = n_permutations.min(available);
    let warning = (n < n_permutations).then(|| {
        format!(
            "{} atomic edits allow only {available} permutations; requested {n_permutations}",
            seq.atomic_edits.len()
        )
    });

    let mut variants = vec![InstructionVariant {
        text: join_atomics(&seq.atomic_edits, AGGREGATE_CONNECTIVE)?,
        atomics: seq.atomic_edits.clone(),
        order: OrderTag::InOrder,
        rewrite: RewriteTag::Original,
    }];
    let identity: Vec<usize> = (0..seq.atomic_edits.len()).collect();
    let mut seen = HashSet::from([identity.clone()]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while variants.len() <= n {
        let mut order = identity.clone();
        order.shuffle(&mut rng);
        if !seen.insert(order.clone()) {
            continue;
        }
        let atomics: Vec<String> = order.iter().map(|&i| seq.atomic_edits[i].clone()).collect();
        variants.push(InstructionVariant {
            text: join_atomics(&atomics, AGGREGATE_CONNECTIVE)?,
            atomics,
            order: OrderTag::Permuted(variants.len()),
            rewrite: RewriteTag::Original,
        });
    }
    Ok(Aggregation { variants, warning })
}

/// Paraphrasing hooks: each atomic on its own, then the whole instruction.
pub trait Rewriter: Send + Sync {
    fn rewrite_atomic(&self, atomic: &str, variant: usize) -> Result<String, String>;
    fn rewrite_holistic(&self, atomics: &[String], variant: usize) -> Result<String, String>;
}

/// Leaves every text as it is.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRewriter;

impl Rewriter for IdentityRewriter {
    fn rewrite_atomic(&self, atomic: &str, _variant: usize) -> Result<String, String> {
        Ok(atomic.to_string())
    }

    fn rewrite_holistic(&self, atomics: &[String], _variant: usize) -> Result<String, String> {
        Ok(atomics.join(AGGREGATE_CONNECTIVE))
    }
}

#[derive(Debug, Deserialize)]
struct TableSpec {
    connectives: Vec<String>,
    rule: Vec<RuleSpec>,
}

#[derive(Debug, Deserialize)]
struct RuleSpec {
    pattern: String,
    replacement: String,
}

/// Table-driven rewriter: regex synonym rules for atomics and a rotating
/// connective for the holistic pass.
#[derive(Debug, Clone)]
pub struct TableRewriter {
    rules: Vec<(Regex, String)>,
    connectives: Vec<String>,
}

static DEFAULT_TABLE: LazyLock<TableRewriter> = LazyLock::new(|| {
    TableRewriter::from_toml(include_str!("../data/rewrite_table.toml")).expect("bundled table is valid")
});

impl TableRewriter {
    /// The table shipped with the crate.
    pub fn bundled() -> Self {
        DEFAULT_TABLE.clone()
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let spec: TableSpec = toml::from_str(text).map_err(|e| PipelineError::Table(e.to_string()))?;
        if spec.connectives.is_empty() {
            return Err(PipelineError::Table("at least one connective is required".into()));
        }
        let rules = spec
            .rule
            .into_iter()
            .map(|r| {
                Regex::new(&format!("(?i){}", r.pattern))
                    .map(|re| (re, r.replacement))
                    .map_err(|e| PipelineError::Table(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            rules,
            connectives: spec.connectives,
        })
    }
}

impl Rewriter for TableRewriter {
    fn rewrite_atomic(&self, atomic: &str, _variant: usize) -> Result<String, String> {
        let text = atomic.trim().trim_end_matches(['.', '!']);
        for (re, replacement) in &self.rules {
            if re.is_match(text) {
                return Ok(re.replace(text, replacement.as_str()).into_owned());
            }
        }
        Ok(text.to_string())
    }

    fn rewrite_holistic(&self, atomics: &[String], variant: usize) -> Result<String, String> {
        Ok(atomics.join(&self.connectives[variant % self.connectives.len()]))
    }
}

/// Produces `x` paraphrases of `variant`, tagged `rewritten(0..x)`. A failed
/// rewrite yields an error in its slot without affecting the others.
pub fn rewrite_two_level(
    variant: &InstructionVariant,
    rewriter: &dyn Rewriter,
    x: usize,
) -> Vec<Result<InstructionVariant, PipelineError>> {
    (0..x)
        .map(|i| {
            let fail = |message: String| PipelineError::Rewrite { index: i, message };
            let atomics = variant
                .atomics
                .iter()
                .map(|a| rewriter.rewrite_atomic(a, i))
                .collect::<Result<Vec<_>, _>>()
                .map_err(fail)?;
            let text = rewriter.rewrite_holistic(&atomics, i).map_err(fail)?;
            Ok(InstructionVariant {
                text: ComplexInstruction::new(text)?,
                atomics,
                order: variant.order,
                rewrite: RewriteTag::Rewritten(i),
            })
        })
        .collect()
}

/// How candidates are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// Apply the variant's atomics in order, then stop.
    #[default]
    OneShot,
    /// Run the closed loop with the configured policy and terminator.
    Loop,
}

#[derive(Debug, Clone)]
pub struct Candidate {
    /// Position of the variant in the input list.
    pub index: usize,
    pub variant: InstructionVariant,
    pub outcome: EpisodeOutcome,
}

#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub candidates: Vec<Candidate>,
    /// `(variant index, reason)` for every variant that produced nothing.
    pub failures: Vec<(usize, String)>,
}

/// Executes every variant against `image`. Failed variants are recorded and
/// skipped. Episode ids are `<source_id>/v<index>`.
pub fn generate_candidates(
    source_id: &str,
    image: &Image,
    variants: &[InstructionVariant],
    backends: &Backends,
    mode: GenerationMode,
    config: &LoopConfig,
) -> Result<CandidatePool, PipelineError> {
    let results: Vec<Result<EpisodeOutcome, String>> = variants
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let id = EpisodeId::new(format!("{source_id}/v{i}"));
            let outcome = match mode {
                GenerationMode::OneShot => {
                    run_plan(id, image, &v.text, &v.atomics, backends.editor.as_ref(), config)
                }
                GenerationMode::Loop => run_episode(id, image, &v.text, backends, config),
            }
            .map_err(|e| e.to_string())?;
            match outcome.trajectory.termination() {
                Some(Termination::BackendError) => {
                    Err(outcome.trajectory.failure().unwrap_or("backend error").to_string())
                }
                _ => Ok(outcome),
            }
        })
        .collect();
    let mut pool = CandidatePool {
        candidates: Vec::new(),
        failures: Vec::new(),
    };
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(outcome) => pool.candidates.push(Candidate {
                index: i,
                variant: variants[i].clone(),
                outcome,
            }),
            Err(reason) => pool.failures.push((i, reason)),
        }
    }
    if pool.candidates.is_empty() {
        return Err(PipelineError::EmptyPool {
            source_id: source_id.to_string(),
            failures: pool.failures.iter().map(|(i, r)| format!("v{i}: {r}")).collect(),
        });
    }
    Ok(pool)
}

/// Mean of each score component over several judges.
pub fn mean_scores(scores: &[ScoreTriple]) -> Option<ScoreTriple> {
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(ScoreTriple {
        sc: scores.iter().map(|s| s.sc).sum::<f64>() / n,
        pq: scores.iter().map(|s| s.pq).sum::<f64>() / n,
        overall: scores.iter().map(|s| s.overall).sum::<f64>() / n,
    })
}

/// Scores (I_0, final image, C) with every scorer and averages the results.
pub fn score_outcome(
    original: &Image,
    outcome: &EpisodeOutcome,
    instruction: &str,
    scorers: &[Arc<dyn ScorerBackend>],
) -> Result<ScoreTriple, BackendError> {
    let request = ScorerRequest {
        source_image: ImagePayload::inline(original),
        edited_image: ImagePayload::inline(outcome.final_image()),
        instruction_text: instruction.to_string(),
    };
    let scores = scorers
        .iter()
        .map(|s| s.score(&request).map(|r| r.scores))
        .collect::<Result<Vec<_>, _>>()?;
    mean_scores(&scores).ok_or_else(|| BackendError::Malformed(vec![Violation::new("scorers", "no scorer configured")]))
}

/// Index of the best score: highest sc, then highest pq, then the earliest.
pub fn rank_and_select(scores: &[ScoreTriple]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) => {
                let cur = &scores[b];
                if s.sc > cur.sc || (s.sc == cur.sc && s.pq > cur.pq) {
                    best = Some(i);
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleType {
    Start,
    Continue,
    Stop,
}

/// One training transition: given (previous image, original image,
/// instruction), predict `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionRecord {
    pub schema: String,
    pub episode_id: EpisodeId,
    /// 1-based position of the target within the trajectory.
    pub step: usize,
    pub sample_type: SampleType,
    pub original_image: ImageRef,
    pub previous_image: ImageRef,
    pub instruction: ComplexInstruction,
    pub target: AtomicInstruction,
}

impl SupervisionRecord {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.schema != SAMPLE_SCHEMA {
            out.push(Violation::new("schema", format!("expected {SAMPLE_SCHEMA:?}")));
        }
        self.instruction.violations("instruction", &mut out);
        self.target.violations("target", &mut out);
        match self.sample_type {
            SampleType::Start if self.previous_image != self.original_image => out.push(Violation::new(
                "previous_image",
                "start sample must use the original image as previous image",
            )),
            SampleType::Stop if !self.target.is_stop() => {
                out.push(Violation::new("target", "stop sample must target the stop token"))
            }
            SampleType::Start | SampleType::Continue if self.target.is_stop() => out.push(Violation::new(
                "target",
                "start and continue samples must target an edit",
            )),
            _ => {}
        }
        if self.step == 0 {
            out.push(Violation::new("step", "steps are 1-based"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Formulation {
    pub records: Vec<SupervisionRecord>,
    /// True for budget-exhausted trajectories, which have no stop record.
    pub partial: bool,
}

/// Cuts a trajectory into one start record, a continue record per later
/// edit, and a stop record when the trajectory stopped.
pub fn formulate_samples(trajectory: &Trajectory) -> Result<Formulation, PipelineError> {
    let partial = match trajectory.termination() {
        Some(Termination::Stopped) => false,
        Some(Termination::BudgetExhausted) => true,
        other => {
            return Err(PipelineError::NotFormulable(format!("termination is {other:?}")));
        }
    };
    if trajectory.edit_steps() == 0 {
        return Err(PipelineError::NotFormulable("no edit steps".into()));
    }
    let records = trajectory
        .steps()
        .iter()
        .map(|step| SupervisionRecord {
            schema: SAMPLE_SCHEMA.to_string(),
            episode_id: trajectory.episode_id().clone(),
            step: step.index,
            sample_type: if step.is_stop() {
                SampleType::Stop
            } else if step.index == 1 {
                SampleType::Start
            } else {
                SampleType::Continue
            },
            original_image: trajectory.original_image().clone(),
            previous_image: step.input_image.clone(),
            instruction: trajectory.instruction().clone(),
            target: step.instruction.clone(),
        })
        .collect();
    Ok(Formulation { records, partial })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurateOptions {
    pub n_permutations: usize,
    pub rewrites: usize,
    pub seed: u64,
    pub mode: GenerationMode,
    pub loop_config: LoopConfig,
}

impl Default for CurateOptions {
    fn default() -> Self {
        Self {
            n_permutations: DEFAULT_PERMUTATIONS,
            rewrites: DEFAULT_REWRITES,
            seed: 0,
            mode: GenerationMode::OneShot,
            loop_config: LoopConfig::default(),
        }
    }
}

/// The selected candidate for one source.
#[derive(Debug, Clone)]
pub struct Curated {
    pub source_id: String,
    pub selected: Candidate,
    pub score: ScoreTriple,
    pub pool_size: usize,
    pub warnings: Vec<String>,
}

fn source_seed(seed: u64, source_id: &str) -> u64 {
    let h = ContentHash::of(source_id.as_bytes());
    seed ^ u64::from_le_bytes(h.as_bytes()[..8].try_into().unwrap())
}

/// Runs every curation stage for one source.
pub fn curate_source(
    source: &SourceRecord,
    rewriter: &dyn Rewriter,
    backends: &Backends,
    scorers: &[Arc<dyn ScorerBackend>],
    opts: &CurateOptions,
) -> Result<Curated, PipelineError> {
    let seq = source.sequence()?;
    let image = source.image.to_image()?;
    let aggregation = aggregate(&seq, opts.n_permutations, source_seed(opts.seed, &seq.source_id))?;
    let mut warnings: Vec<String> = aggregation.warning.into_iter().collect();
    let mut variants = Vec::new();
    for base in &aggregation.variants {
        variants.push(base.clone());
        for r in rewrite_two_level(base, rewriter, opts.rewrites) {
            match r {
                Ok(v) => variants.push(v),
                Err(e) => warnings.push(e.to_string()),
            }
        }
    }
    let pool = generate_candidates(&seq.source_id, &image, &variants, backends, opts.mode, &opts.loop_config)?;
    warnings.extend(pool.failures.iter().map(|(i, r)| format!("v{i}: {r}")));
    let mut scored = Vec::new();
    for c in pool.candidates {
        match score_outcome(&image, &c.outcome, c.variant.text.text(), scorers) {
            Ok(s) => scored.push((c, s)),
            Err(e) => warnings.push(format!("v{}: scoring failed: {e}", c.index)),
        }
    }
    let scores: Vec<ScoreTriple> = scored.iter().map(|(_, s)| *s).collect();
    let best = rank_and_select(&scores).ok_or_else(|| PipelineError::EmptyPool {
        source_id: seq.source_id.clone(),
        failures: warnings.clone(),
    })?;
    let pool_size = scored.len();
    let (selected, score) = scored.swap_remove(best);
    Ok(Curated {
        source_id: seq.source_id,
        selected,
        score,
        pool_size,
        warnings,
    })
}

/// The default editor for one-shot curation over grid sources.
pub fn grid_backends() -> Backends {
    use crate::protocol::mock::{GoalTerminator, OraclePolicy};
    Backends::new(
        Arc::new(OraclePolicy::new()),
        Arc::new(GridEditor::new()),
        Some(Arc::new(GoalTerminator::new())),
    )
}

/// Collects every image a set of curated sources references.
pub fn curated_images(curated: &[Curated]) -> ImageSet {
    let mut images = ImageSet::new();
    for c in curated {
        images.extend(c.selected.outcome.images.clone());
    }
    images
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::protocol::mock::GridScorer;

    fn seq(items: &[&str]) -> AtomicEditSequence {
        AtomicEditSequence::new("s", items.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn score(sc: f64, pq: f64) -> ScoreTriple {
        ScoreTriple::from_sc_pq(sc, pq).unwrap()
    }

    #[test]
    fn aggregate_two() {
        let a = aggregate(&seq(&["A", "B"]), 1, 7).unwrap();
        let texts: Vec<_> = a.variants.iter().map(|v| v.text.text()).collect();
        assert_eq!(texts, ["A then B", "B then A"]);
        assert_eq!(a.variants[0].order, OrderTag::InOrder);
        assert_eq!(a.variants[1].order, OrderTag::Permuted(1));
        assert!(a.warning.is_none());
    }

    #[test]
    fn aggregate_caps_with_warning() {
        let a = aggregate(&seq(&["A"]), 2, 7).unwrap();
        assert_eq!(a.variants.len(), 1);
        assert!(a.warning.is_some());
    }

    #[test]
    fn aggregate_permutations_are_distinct_and_sound() {
        let a = aggregate(&seq(&["A", "B", "C"]), 2, 3).unwrap();
        assert_eq!(a.variants.len(), 3);
        let mut base = a.variants[0].atomics.clone();
        base.sort();
        let mut seen = HashSet::new();
        for v in &a.variants {
            let mut m = v.atomics.clone();
            m.sort();
            assert_eq!(m, base);
            assert!(seen.insert(v.atomics.clone()));
        }
        assert_eq!(a, aggregate(&seq(&["A", "B", "C"]), 2, 3).unwrap());
        assert!(aggregate(&seq(&["A", "B", "C"]), 9, 3).unwrap().warning.is_some());
    }

    #[test]
    fn rewrites() {
        let base = aggregate(&seq(&["change the stove to black"]), 0, 0).unwrap().variants.remove(0);
        let ident = rewrite_two_level(&base, &IdentityRewriter, 3);
        assert_eq!(ident.len(), 3);
        let tags: HashSet<_> = ident.iter().map(|r| r.as_ref().unwrap().rewrite).collect();
        assert_eq!(tags.len(), 3);
        assert!(ident.iter().all(|r| r.as_ref().unwrap().text == base.text));

        let table = TableRewriter::bundled();
        let out = rewrite_two_level(&base, &table, 1).remove(0).unwrap();
        assert_eq!(out.text.text(), "make the stove black");
        assert!(rewrite_two_level(&base, &table, 0).is_empty());
    }

    #[test]
    fn table_rewrites_stay_executable() {
        let grid = Grid::parse("RGBW/KYRG/BWKY/RGBW").unwrap();
        let table = TableRewriter::bundled();
        for atomic in ["set 1 1 K", "Change cell (2,3) to white", "recolor R G", "fill_row 2 B"] {
            let before = crate::grid::GridOp::parse(atomic).unwrap().apply(&grid).unwrap();
            let rewritten = table.rewrite_atomic(atomic, 0).unwrap();
            assert_ne!(rewritten, atomic);
            let after = crate::grid::GridOp::parse(&rewritten).unwrap().apply(&grid).unwrap();
            assert_eq!(before, after, "{atomic} -> {rewritten}");
        }
    }

    #[test]
    fn selection() {
        assert_eq!(rank_and_select(&[score(7.0, 5.0), score(9.5, 5.0), score(8.1, 5.0)]), Some(1));
        assert_eq!(rank_and_select(&[score(9.0, 6.0), score(9.0, 8.0)]), Some(1));
        assert_eq!(rank_and_select(&[score(9.0, 8.0), score(9.0, 8.0)]), Some(0));
        assert_eq!(rank_and_select(&[]), None);
    }

    fn variants(texts: &[&[&str]]) -> Vec<InstructionVariant> {
        texts
            .iter()
            .map(|atomics| InstructionVariant {
                text: ComplexInstruction::new(atomics.join(" then ")).unwrap(),
                atomics: atomics.iter().map(|s| s.to_string()).collect(),
                order: OrderTag::InOrder,
                rewrite: RewriteTag::Original,
            })
            .collect()
    }

    #[test]
    fn candidates_isolate_failures() {
        let image = Image::from_grid(&Grid::parse("WW/WW").unwrap());
        let vs = variants(&[&["set 1 1 R"], &["paint the sky"], &["set 1 1 R"]]);
        let pool = generate_candidates("s", &image, &vs, &grid_backends(), GenerationMode::OneShot, &LoopConfig::default())
            .unwrap();
        assert_eq!(pool.candidates.len(), 2);
        assert_eq!(pool.failures.len(), 1);
        assert_eq!(pool.failures[0].0, 1);
        let a = &pool.candidates[0].outcome;
        let b = &pool.candidates[1].outcome;
        assert_eq!(a.trajectory.final_image(), b.trajectory.final_image());

        let err = generate_candidates("s", &image, &vs[1..2], &grid_backends(), GenerationMode::OneShot, &LoopConfig::default())
            .unwrap_err();
        assert!(matches!(err, PipelineError::EmptyPool { .. }));
    }

    #[test]
    fn formulation_counts() {
        let image = Image::from_grid(&Grid::parse("WWW/WWW").unwrap());
        let counts = |atomics: &[&str], max_steps: usize| {
            let vs = variants(&[atomics]);
            let pool = generate_candidates(
                "s",
                &image,
                &vs,
                &grid_backends(),
                GenerationMode::OneShot,
                &LoopConfig::default().with_max_steps(max_steps),
            )
            .unwrap();
            let f = formulate_samples(&pool.candidates[0].outcome.trajectory).unwrap();
            for r in &f.records {
                assert!(r.violations().is_empty(), "{:?}", r.violations());
            }
            let n = |t| f.records.iter().filter(|r| r.sample_type == t).count();
            (n(SampleType::Start), n(SampleType::Continue), n(SampleType::Stop), f.partial)
        };
        assert_eq!(counts(&["set 1 1 R", "set 1 2 G", "set 1 3 B"], 5), (1, 2, 1, false));
        assert_eq!(counts(&["set 1 1 R"], 5), (1, 0, 1, false));
        assert_eq!(counts(&["set 1 1 R", "set 1 2 G", "set 1 3 B"], 2), (1, 1, 0, true));
    }

    #[test]
    fn curate_end_to_end() {
        let image = Image::from_grid(&Grid::parse("WWWW/WWWW/WWWW/WWWW").unwrap());
        let source = SourceRecord {
            source_id: "src-1".into(),
            image: ImagePayload::inline(&image),
            atomic_edits: vec!["set 1 1 R".into(), "recolor W G".into()],
        };
        let scorers: Vec<Arc<dyn ScorerBackend>> = vec![Arc::new(GridScorer::new())];
        let opts = CurateOptions::default();
        let table = TableRewriter::bundled();
        let a = curate_source(&source, &table, &grid_backends(), &scorers, &opts).unwrap();
        assert_eq!(a.pool_size, 2 * (1 + DEFAULT_REWRITES));
        let b = curate_source(&source, &table, &grid_backends(), &scorers, &opts).unwrap();
        let (ta, tb) = (&a.selected.outcome.trajectory, &b.selected.outcome.trajectory);
        assert_eq!(ta.instruction_texts(), tb.instruction_texts());
        assert_eq!(ta.image_refs(), tb.image_refs());
        assert_eq!(
            formulate_samples(ta).unwrap().records,
            formulate_samples(tb).unwrap().records
        );
        assert_eq!(a.score.sc, 10.0);
        assert_eq!(a.selected.index, 0);
        assert_eq!(a.selected.variant.order, OrderTag::InOrder);
    }
}
