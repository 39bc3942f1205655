//! Group-relative policy optimisation on a linear softmax policy over the grid
//! instruction vocabulary.
//!
//! The policy scores every action `a` in state `s` with `z_a = θ·φ(s, a)`,
//! where `φ` describes what the action would do to the grid: goals it
//! completes or breaks, collateral cells it touches, and whether it stops.
//! Each training step draws a group of K actions from one state, executes
//! each from that same state, turns composite rewards into group-normalised
//! advantages, and takes a gradient-ascent step on
//!
//! ```text
//! J(θ) = (1/K) Σ_k A_k log π_θ(u_k | s) − β KL(π_θ(·|s) ‖ π_ref(·|s))
//! ```
//!
//! with both gradient terms computed exactly over the finite vocabulary.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{self, random_task, GoalSet, Grid, GridOp};
use crate::model::STOP_TOKEN;

pub const ADVANTAGE_EPS: f64 = 1e-8;
pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("group size {0} is below 2")]
    GroupTooSmall(usize),
    #[error("parameter shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(
        "diverged at iteration {iteration}: mean |logit| {mean_abs_logit:.3e} exceeds {DIVERGENCE_LIMIT:e}; \
         max |θ| {max_abs_param:.3e}, last mean reward {last_reward:.4}"
    )]
    Diverged {
        iteration: usize,
        mean_abs_logit: f64,
        max_abs_param: f64,
        last_reward: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub sc: f64,
    pub pq: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { sc: 0.5, pq: 0.5 }
    }
}

impl RewardWeights {
    pub fn new(sc: f64, pq: f64) -> Result<Self, TrainError> {
        let w = Self { sc, pq };
        w.validate()?;
        Ok(w)
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(self.sc >= 0.0 && self.pq >= 0.0 && self.sc + self.pq > 0.0) {
            return Err(TrainError::Config(format!(
                "reward weights must be nonnegative with a positive sum, got ({}, {})",
                self.sc, self.pq
            )));
        }
        Ok(())
    }
}

pub fn composite_reward(sc: f64, pq: f64, weights: RewardWeights) -> f64 {
    weights.sc * sc + weights.pq * pq
}

/// `(r − mean) / (std + ε)` with the population standard deviation; all
/// zeros when every reward is equal.
pub fn normalize_advantages(rewards: &[f64]) -> Result<Vec<f64>, TrainError> {
    if rewards.len() < 2 {
        return Err(TrainError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    if var == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    let std = var.sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_EPS)).collect())
}

/// One entry of the policy's vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ToyAction {
    Op(GridOp),
    Stop,
}

impl ToyAction {
    pub fn text(&self) -> String {
        match self {
            ToyAction::Op(op) => op.to_string(),
            ToyAction::Stop => STOP_TOKEN.to_string(),
        }
    }

    pub fn parse(text: &str) -> Option<ToyAction> {
        if text.trim() == STOP_TOKEN {
            Some(ToyAction::Stop)
        } else {
            GridOp::parse(text).ok().map(ToyAction::Op)
        }
    }
}

/// Every op expressible on a `rows × cols` grid, then stop.
pub fn vocabulary(rows: usize, cols: usize) -> Vec<ToyAction> {
    GridOp::enumerate(rows, cols)
        .into_iter()
        .map(ToyAction::Op)
        .chain(std::iter::once(ToyAction::Stop))
        .collect()
}

pub const FEATURE_NAMES: [&str; 7] = [
    "cell_goals_completed",
    "absent_goals_completed",
    "goals_broken",
    "collateral_per_row",
    "stop_when_done",
    "stop_when_unfinished",
    "noop",
];
pub const N_FEATURES: usize = FEATURE_NAMES.len();

/// Weight vector over the joint state-action features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub theta: Vec<f64>,
}

impl ToyParams {
    pub fn zeros() -> Self {
        Self {
            theta: vec![0.0; N_FEATURES],
        }
    }

    pub fn from_vec(theta: Vec<f64>) -> Result<Self, TrainError> {
        if theta.len() != N_FEATURES {
            return Err(TrainError::Shape {
                expected: N_FEATURES,
                got: theta.len(),
            });
        }
        Ok(Self { theta })
    }

    fn check(&self) -> Result<(), TrainError> {
        if self.theta.len() != N_FEATURES {
            return Err(TrainError::Shape {
                expected: N_FEATURES,
                got: self.theta.len(),
            });
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ToyParams) -> f64 {
        self.theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A decision point: the episode's original grid, its current grid and the
/// goals parsed from the instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyState {
    pub original: Grid,
    pub current: Grid,
    pub goals: GoalSet,
}

impl ToyState {
    pub fn start(grid: Grid, goals: GoalSet) -> Self {
        Self {
            original: grid.clone(),
            current: grid,
            goals,
        }
    }

    /// Grid after taking `action` from this state. Ops that cannot apply
    /// leave the grid unchanged.
    pub fn successor(&self, action: ToyAction) -> Grid {
        match action {
            ToyAction::Stop => self.current.clone(),
            ToyAction::Op(op) => op.apply(&self.current).unwrap_or_else(|_| self.current.clone()),
        }
    }

    fn features(&self, action: ToyAction) -> [f64; N_FEATURES] {
        let mut f = [0.0; N_FEATURES];
        let next = self.successor(action);
        for goal in self.goals.goals() {
            let before = goal.is_satisfied(&self.current);
            let after = goal.is_satisfied(&next);
            if !before && after {
                match goal {
                    grid::Goal::Cell { .. } => f[0] += 1.0,
                    grid::Goal::Absent { .. } => f[1] += 1.0,
                }
            }
            if before && !after {
                f[2] += 1.0;
            }
        }
        if let Ok(fp) = grid::footprint(&self.current, &next, &self.goals) {
            f[3] = self
                .current
                .cells()
                .iter()
                .zip(next.cells())
                .enumerate()
                .filter(|(i, (a, b))| a != b && !fp.contains(*i))
                .count() as f64
                / self.current.cols() as f64;
        }
        match action {
            ToyAction::Stop if self.goals.all_satisfied(&self.current) => f[4] = 1.0,
            ToyAction::Stop => f[5] = 1.0,
            ToyAction::Op(GridOp::Noop) => f[6] = 1.0,
            ToyAction::Op(_) => {}
        }
        f
    }

    /// `φ(s, a)` for every action in `vocab`.
    pub fn feature_matrix(&self, vocab: &[ToyAction]) -> Vec<[f64; N_FEATURES]> {
        vocab.iter().map(|a| self.features(*a)).collect()
    }
}

fn dot(theta: &[f64], phi: &[f64; N_FEATURES]) -> f64 {
    theta.iter().zip(phi).map(|(t, p)| t * p).sum()
}

pub fn logits(params: &ToyParams, phi: &[[f64; N_FEATURES]]) -> Vec<f64> {
    phi.iter().map(|p| dot(&params.theta, p)).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// Exact `KL(p ‖ q)` from log-probabilities.
pub fn kl(logp: &[f64], logq: &[f64]) -> f64 {
    logp.iter().zip(logq).map(|(lp, lq)| lp.exp() * (lp - lq)).sum()
}

/// Draws `k` i.i.d. indices from `softmax(z)`.
pub fn sample_from_logits(z: &[f64], k: usize, seed: u64) -> Vec<usize> {
    let logp = log_softmax(z);
    let dist = WeightedIndex::new(logp.iter().map(|l| l.exp())).expect("softmax weights are valid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| dist.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCandidate {
    pub action: usize,
    pub instruction: String,
    pub log_prob: f64,
    pub sc: Option<f64>,
    pub pq: Option<f64>,
    pub reward: Option<f64>,
    pub advantage: Option<f64>,
}

/// K candidate actions drawn from one state.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub state: ToyState,
    pub candidates: Vec<GroupCandidate>,
}

impl GroupSample {
    pub fn rewards(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.reward.unwrap_or(0.0)).collect()
    }

    pub fn advantages(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.advantage.unwrap_or(0.0)).collect()
    }
}

pub fn sample_group(
    params: &ToyParams,
    state: &ToyState,
    vocab: &[ToyAction],
    k: usize,
    seed: u64,
) -> Result<GroupSample, TrainError> {
    if k < 2 {
        return Err(TrainError::GroupTooSmall(k));
    }
    params.check()?;
    let logp = log_softmax(&logits(params, &state.feature_matrix(vocab)));
    let candidates = sample_from_logits(&logp, k, seed)
        .into_iter()
        .map(|a| GroupCandidate {
            action: a,
            instruction: vocab[a].text(),
            log_prob: logp[a],
            sc: None,
            pq: None,
            reward: None,
            advantage: None,
        })
        .collect();
    Ok(GroupSample {
        state: state.clone(),
        candidates,
    })
}

/// Scores an edit outcome. Only its outputs enter the update.
pub trait RewardModel: Sync {
    fn score(&self, original: &Grid, edited: &Grid, goals: &GoalSet) -> (f64, f64);
}

/// Goal-based SC and collateral-based PQ.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridReward;

impl RewardModel for GridReward {
    fn score(&self, original: &Grid, edited: &Grid, goals: &GoalSet) -> (f64, f64) {
        let sc = grid::grid_sc(edited, goals);
        let pq = grid::grid_pq(original, edited, goals).unwrap_or(0.0);
        (sc, pq)
    }
}

/// Executes every candidate from the group's state, scores the result
/// against the original grid, and fills in rewards and advantages. A
/// candidate whose text is not an executable instruction gets reward 0.
pub fn evaluate_group(
    mut group: GroupSample,
    model: &dyn RewardModel,
    weights: RewardWeights,
) -> Result<GroupSample, TrainError> {
    let state = &group.state;
    for c in &mut group.candidates {
        match ToyAction::parse(&c.instruction) {
            Some(action) => {
                let next = state.successor(action);
                let (sc, pq) = model.score(&state.original, &next, &state.goals);
                c.sc = Some(sc);
                c.pq = Some(pq);
                c.reward = Some(composite_reward(sc, pq, weights));
            }
            None => {
                c.sc = None;
                c.pq = None;
                c.reward = Some(0.0);
            }
        }
    }
    let advantages = normalize_advantages(&group.rewards())?;
    for (c, a) in group.candidates.iter_mut().zip(advantages) {
        c.advantage = Some(a);
    }
    Ok(group)
}

/// The surrogate objective `J(θ)` for one evaluated group.
pub fn surrogate(
    params: &ToyParams,
    group: &GroupSample,
    reference: &ToyParams,
    beta: f64,
    vocab: &[ToyAction],
) -> f64 {
    let phi = group.state.feature_matrix(vocab);
    let logp = log_softmax(&logits(params, &phi));
    let logr = log_softmax(&logits(reference, &phi));
    let k = group.candidates.len() as f64;
    let pg: f64 = group
        .candidates
        .iter()
        .map(|c| c.advantage.unwrap_or(0.0) * logp[c.action])
        .sum::<f64>()
        / k;
    pg - beta * kl(&logp, &logr)
}

/// Exact gradient of [`surrogate`] with respect to θ.
pub fn grpo_gradient(
    params: &ToyParams,
    group: &GroupSample,
    reference: &ToyParams,
    beta: f64,
    vocab: &[ToyAction],
) -> Result<Vec<f64>, TrainError> {
    params.check()?;
    reference.check()?;
    let phi = group.state.feature_matrix(vocab);
    Ok(gradient_with_features(params, &phi, group, reference, beta))
}

fn gradient_with_features(
    params: &ToyParams,
    phi: &[[f64; N_FEATURES]],
    group: &GroupSample,
    reference: &ToyParams,
    beta: f64,
) -> Vec<f64> {
    let logp = log_softmax(&logits(params, phi));
    let logr = log_softmax(&logits(reference, phi));
    let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();

    let mut mean_phi = [0.0; N_FEATURES];
    for (pa, f) in p.iter().zip(phi) {
        for j in 0..N_FEATURES {
            mean_phi[j] += pa * f[j];
        }
    }

    let mut grad = vec![0.0; N_FEATURES];
    let k = group.candidates.len() as f64;
    for c in &group.candidates {
        let a = c.advantage.unwrap_or(0.0);
        if a == 0.0 {
            continue;
        }
        for j in 0..N_FEATURES {
            grad[j] += a * (phi[c.action][j] - mean_phi[j]) / k;
        }
    }
    if beta != 0.0 {
        let kl_value = kl(&logp, &logr);
        for (a, f) in phi.iter().enumerate() {
            let w = p[a] * ((logp[a] - logr[a]) - kl_value);
            for j in 0..N_FEATURES {
                grad[j] -= beta * w * f[j];
            }
        }
    }
    grad
}

/// Shape of the synthetic tasks used for training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub rows: usize,
    pub cols: usize,
    pub goals: usize,
    pub absent_share: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            goals: 2,
            absent_share: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Group size K.
    pub k: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    pub weights: RewardWeights,
    /// Fresh tasks per iteration; one group is drawn per visited state.
    pub tasks_per_iteration: usize,
    /// Decision points visited per task, following the first candidate.
    pub steps_per_task: usize,
    /// Held-out tasks on which the learning curve is measured.
    pub eval_tasks: usize,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 8,
            beta: 0.02,
            learning_rate: 0.1,
            iterations: 200,
            seed: 0,
            weights: RewardWeights::default(),
            tasks_per_iteration: 4,
            steps_per_task: 3,
            eval_tasks: 32,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.k < 2 {
            return Err(TrainError::GroupTooSmall(self.k));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(TrainError::Config(format!("beta must be finite and ≥ 0, got {}", self.beta)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!("learning_rate must be finite and ≥ 0, got {}", self.learning_rate)));
        }
        if self.tasks_per_iteration == 0 || self.steps_per_task == 0 || self.eval_tasks == 0 {
            return Err(TrainError::Config("task counts must be positive".into()));
        }
        let EnvConfig { rows, cols, goals, .. } = self.env;
        if rows == 0 || cols == 0 || goals == 0 || goals > rows * cols {
            return Err(TrainError::Config(format!("bad environment {rows}x{cols} with {goals} goals")));
        }
        self.weights.validate()
    }
}

/// One point of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    /// Expected composite reward of one policy action, averaged over the
    /// held-out start states.
    pub mean_reward: f64,
    /// Mean exact KL from the reference policy over the same states.
    pub kl_to_ref: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub curve: Vec<CurvePoint>,
    pub params: ToyParams,
    pub reference: ToyParams,
}

fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // SplitMix64 finaliser over the combined inputs.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Prepared {
    phi: Vec<[f64; N_FEATURES]>,
    rewards: Vec<f64>,
}

fn prepare(state: ToyState, vocab: &[ToyAction], model: &dyn RewardModel, weights: RewardWeights) -> Prepared {
    let phi = state.feature_matrix(vocab);
    let rewards = vocab
        .iter()
        .map(|a| {
            let (sc, pq) = model.score(&state.original, &state.successor(*a), &state.goals);
            composite_reward(sc, pq, weights)
        })
        .collect();
    Prepared { phi, rewards }
}

fn evaluate(params: &ToyParams, reference: &ToyParams, eval: &[Prepared]) -> (f64, f64) {
    let (mut reward, mut divergence) = (0.0, 0.0);
    for e in eval {
        let logp = log_softmax(&logits(params, &e.phi));
        let logr = log_softmax(&logits(reference, &e.phi));
        reward += logp.iter().zip(&e.rewards).map(|(l, r)| l.exp() * r).sum::<f64>();
        divergence += kl(&logp, &logr);
    }
    let n = eval.len() as f64;
    (reward / n, divergence / n)
}

fn mean_abs_logit(params: &ToyParams, eval: &[Prepared]) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for e in eval {
        for z in logits(params, &e.phi) {
            total += z.abs();
            count += 1;
        }
    }
    total / count as f64
}

/// Trains from `init` (also the frozen reference) and returns the curve,
/// whose point 0 is measured before any update.
pub fn train_toy_from(config: &TrainConfig, init: ToyParams) -> Result<TrainResult, TrainError> {
    config.validate()?;
    init.check()?;
    let EnvConfig {
        rows,
        cols,
        goals,
        absent_share,
    } = config.env;
    let vocab = vocabulary(rows, cols);
    let model = GridReward;
    let reference = init.clone();
    let mut params = init;

    let eval: Vec<Prepared> = (0..config.eval_tasks as u64)
        .into_par_iter()
        .map(|i| {
            let task = random_task(derive_seed(config.seed, 1, i), rows, cols, goals, absent_share);
            prepare(ToyState::start(task.grid, task.goals), &vocab, &model, config.weights)
        })
        .collect();

    let point = |iteration, params: &ToyParams| {
        let (mean_reward, kl_to_ref) = evaluate(params, &reference, &eval);
        CurvePoint {
            iteration,
            mean_reward,
            kl_to_ref,
        }
    };
    let mut curve = vec![point(0, &params)];

    for it in 0..config.iterations {
        let groups: Vec<(Vec<[f64; N_FEATURES]>, GroupSample)> = (0..config.tasks_per_iteration as u64)
            .into_par_iter()
            .map(|t| -> Result<Vec<_>, TrainError> {
                let task_index = it as u64 * config.tasks_per_iteration as u64 + t;
                let task = random_task(derive_seed(config.seed, 2, task_index), rows, cols, goals, absent_share);
                let mut state = ToyState::start(task.grid, task.goals);
                let mut out = Vec::new();
                for step in 0..config.steps_per_task as u64 {
                    let seed = derive_seed(config.seed, 3, task_index * 1_000 + step);
                    let group = evaluate_group(sample_group(&params, &state, &vocab, config.k, seed)?, &model, config.weights)?;
                    let first = vocab[group.candidates[0].action];
                    let next = state.successor(first);
                    out.push((state.feature_matrix(&vocab), group));
                    if first == ToyAction::Stop {
                        break;
                    }
                    state = ToyState {
                        current: next,
                        ..state
                    };
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .collect();

        let mut grad = vec![0.0; N_FEATURES];
        for (phi, group) in &groups {
            let g = gradient_with_features(&params, phi, group, &reference, config.beta);
            for j in 0..N_FEATURES {
                grad[j] += g[j] / groups.len() as f64;
            }
        }
        for j in 0..N_FEATURES {
            params.theta[j] += config.learning_rate * grad[j];
        }

        let p = point(it + 1, &params);
        let mal = mean_abs_logit(&params, &eval);
        if !(mal <= DIVERGENCE_LIMIT) || params.theta.iter().any(|t| !t.is_finite()) {
            return Err(TrainError::Diverged {
                iteration: it + 1,
                mean_abs_logit: mal,
                max_abs_param: params.theta.iter().map(|t| t.abs()).fold(0.0, f64::max),
                last_reward: curve.last().map(|c| c.mean_reward).unwrap_or(f64::NAN),
            });
        }
        curve.push(p);
    }
    Ok(TrainResult {
        curve,
        params,
        reference,
    })
}

/// Trains from zero weights, i.e. a uniform reference policy.
pub fn train_toy(config: &TrainConfig) -> Result<TrainResult, TrainError> {
    train_toy_from(config, ToyParams::zeros())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_reward_examples() {
        assert_eq!(composite_reward(10.0, 10.0, RewardWeights::new(0.5, 0.5).unwrap()), 10.0);
        assert_eq!(composite_reward(8.0, 6.0, RewardWeights::new(1.0, 0.0).unwrap()), 8.0);
        assert!((composite_reward(7.5, 2.5, RewardWeights::new(0.7, 0.3).unwrap()) - 6.0).abs() < 1e-12);
        assert!(RewardWeights::new(0.0, 0.0).is_err());
        assert!(RewardWeights::new(-1.0, 2.0).is_err());
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(normalize_advantages(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
        let a = normalize_advantages(&[0.0, 10.0]).unwrap();
        assert!((a[0] + 1.0).abs() < 1e-8 && (a[1] - 1.0).abs() < 1e-8);
        let a = normalize_advantages(&[1.0, 2.0, 3.0]).unwrap();
        let mean = a.iter().sum::<f64>() / 3.0;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
        assert!(matches!(normalize_advantages(&[1.0]), Err(TrainError::GroupTooSmall(1))));
    }

    #[test]
    fn vocabulary_size() {
        assert_eq!(vocabulary(4, 4).len(), 152);
    }

    #[test]
    fn zero_learning_rate_is_flat() {
        let config = TrainConfig {
            learning_rate: 0.0,
            iterations: 5,
            ..TrainConfig::default()
        };
        let result = train_toy(&config).unwrap();
        assert!(result.curve.windows(2).all(|w| w[0].mean_reward == w[1].mean_reward));
        assert_eq!(result.params, result.reference);
    }

    #[test]
    fn divergence_guard_fires() {
        let config = TrainConfig {
            learning_rate: 1e6,
            iterations: 5,
            beta: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train_toy(&config), Err(TrainError::Diverged { .. })));
    }
}
