use mira_core::grid::{random_task, GoalSet, Grid, Symbol};
use mira_core::grpo::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn start_state(seed: u64) -> ToyState {
    let task = random_task(seed, 4, 4, 2, 0.0);
    ToyState::start(task.grid, task.goals)
}

fn evaluated_group(params: &ToyParams, state: &ToyState, k: usize, seed: u64) -> GroupSample {
    let vocab = vocabulary(4, 4);
    let group = sample_group(params, state, &vocab, k, seed).unwrap();
    evaluate_group(group, &GridReward, RewardWeights::default()).unwrap()
}

#[test]
fn uniform_sampling_frequencies() {
    let z = vec![0.0; 152];
    let draws = sample_from_logits(&z, 10_000, 11);
    let mut counts = vec![0usize; z.len()];
    for d in draws {
        counts[d] += 1;
    }
    let uniform = 1.0 / z.len() as f64;
    for c in counts {
        assert!((c as f64 / 10_000.0 - uniform).abs() <= 0.02);
    }
}

#[test]
fn dominant_logit_sampling() {
    let mut z = vec![0.0; 152];
    z[17] = 20.0;
    let hits = sample_from_logits(&z, 10_000, 5).into_iter().filter(|&d| d == 17).count();
    assert!(hits >= 9_999, "{hits}");
}

#[test]
fn sampling_is_seeded() {
    let state = start_state(1);
    let vocab = vocabulary(4, 4);
    let params = ToyParams::from_vec(vec![1.0, 0.5, -1.0, -0.5, 0.2, -0.3, 0.1]).unwrap();
    let a = sample_group(&params, &state, &vocab, 8, 99).unwrap();
    let b = sample_group(&params, &state, &vocab, 8, 99).unwrap();
    assert_eq!(a, b);
    assert!(sample_group(&params, &state, &vocab, 1, 99).is_err());
}

fn group_of(state: &ToyState, texts: &[&str]) -> GroupSample {
    let vocab = vocabulary(4, 4);
    let candidates = texts
        .iter()
        .map(|t| {
            let action = ToyAction::parse(t).and_then(|a| vocab.iter().position(|v| *v == a)).unwrap_or(0);
            GroupCandidate {
                action,
                instruction: t.to_string(),
                log_prob: 0.0,
                sc: None,
                pq: None,
                reward: None,
                advantage: None,
            }
        })
        .collect();
    GroupSample {
        state: state.clone(),
        candidates,
    }
}

#[test]
fn group_evaluation_examples() {
    let grid = Grid::parse("WWWW/WWWW/WWWW/WWWW").unwrap();
    let goals = GoalSet::parse("set 1 1 R then set 2 2 G", 4, 4).unwrap();
    let state = ToyState::start(grid, goals);
    let g = evaluate_group(group_of(&state, &["set 1 1 R", "noop"]), &GridReward, RewardWeights::default()).unwrap();
    assert!(g.candidates[0].reward.unwrap() > g.candidates[1].reward.unwrap());

    let g = evaluate_group(group_of(&state, &["<Stop>", "set 4 4 K"]), &GridReward, RewardWeights::default()).unwrap();
    assert_eq!(g.candidates[0].sc, Some(0.0));

    let g = evaluate_group(group_of(&state, &["set 1 1 R"; 4]), &GridReward, RewardWeights::default()).unwrap();
    assert!(g.advantages().iter().all(|a| *a == 0.0));

    let g = evaluate_group(group_of(&state, &["set 1 1 R", "paint the sky"]), &GridReward, RewardWeights::default())
        .unwrap();
    assert_eq!(g.candidates[1].reward, Some(0.0));
    assert_eq!(g.candidates[1].sc, None);
}

#[test]
fn advantage_moments_per_group() {
    let params = ToyParams::from_vec(vec![2.0, 0.0, -1.0, -1.0, 0.5, -0.5, 0.0]).unwrap();
    for seed in 0..200 {
        let g = evaluated_group(&params, &start_state(seed), 8, seed);
        let a = g.advantages();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!(std == 0.0 || (std - 1.0).abs() < 1e-3, "{std}");
    }
}

#[test]
fn gradient_trivial_cases() {
    let vocab = vocabulary(4, 4);
    let state = start_state(3);
    let params = ToyParams::from_vec(vec![0.3, -0.2, 0.1, 0.4, -0.5, 0.6, -0.7]).unwrap();
    let mut g = evaluated_group(&params, &state, 8, 1);
    for c in &mut g.candidates {
        c.advantage = Some(0.0);
    }
    assert!(grpo_gradient(&params, &g, &ToyParams::zeros(), 0.0, &vocab).unwrap().iter().all(|v| *v == 0.0));
    let grad = grpo_gradient(&params, &g, &params, 5.0, &vocab).unwrap();
    assert!(grad.iter().all(|v| v.abs() < 1e-12), "{grad:?}");

    let bad = ToyParams { theta: vec![0.0; 3] };
    assert!(matches!(
        grpo_gradient(&bad, &g, &params, 1.0, &vocab),
        Err(TrainError::Shape { .. })
    ));
}

/// Central finite differences of the surrogate objective.
fn numeric_gradient(params: &ToyParams, group: &GroupSample, reference: &ToyParams, beta: f64) -> Vec<f64> {
    let vocab = vocabulary(4, 4);
    let h = 1e-5;
    (0..params.theta.len())
        .map(|j| {
            let mut up = params.clone();
            up.theta[j] += h;
            let mut down = params.clone();
            down.theta[j] -= h;
            (surrogate(&up, group, reference, beta, &vocab) - surrogate(&down, group, reference, beta, &vocab)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    let vocab = vocabulary(4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let mut draw = || ToyParams::from_vec((0..N_FEATURES).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let params = draw();
        let reference = draw();
        let beta = [0.0, 0.02, 1.0, 10.0][case % 4];
        let state = start_state(500 + case as u64);
        let group = evaluated_group(&params, &state, 8, case as u64);
        let exact = grpo_gradient(&params, &group, &reference, beta, &vocab).unwrap();
        let numeric = numeric_gradient(&params, &group, &reference, beta);
        let scale = numeric.iter().map(|v| v.abs()).fold(1e-6, f64::max);
        for (e, n) in exact.iter().zip(&numeric) {
            worst = worst.max((e - n).abs() / scale);
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

/// An SC implementation written independently of `grid_sc`.
struct CountingReward;

impl RewardModel for CountingReward {
    fn score(&self, original: &Grid, edited: &Grid, goals: &GoalSet) -> (f64, f64) {
        let held = goals.goals().iter().filter(|g| g.is_satisfied(edited)).count();
        let sc = held as f64 * 10.0 / goals.len() as f64;
        (sc, GridReward.score(original, edited, goals).1)
    }
}

#[test]
fn gradient_depends_only_on_scorer_outputs() {
    let vocab = vocabulary(4, 4);
    let params = ToyParams::from_vec(vec![1.0, 0.0, -0.5, -0.2, 0.0, -0.3, 0.0]).unwrap();
    for seed in 0..20 {
        let state = start_state(seed);
        let raw = sample_group(&params, &state, &vocab, 8, seed).unwrap();
        let a = evaluate_group(raw.clone(), &GridReward, RewardWeights::default()).unwrap();
        let b = evaluate_group(raw, &CountingReward, RewardWeights::default()).unwrap();
        assert_eq!(
            grpo_gradient(&params, &a, &ToyParams::zeros(), 0.02, &vocab).unwrap(),
            grpo_gradient(&params, &b, &ToyParams::zeros(), 0.02, &vocab).unwrap()
        );
    }
}

#[test]
fn single_positive_advantage_gains_probability() {
    let vocab = vocabulary(4, 4);
    let grid = Grid::filled(4, 4, Symbol::W);
    let goals = GoalSet::parse("set 1 1 R then set 3 3 B", 4, 4).unwrap();
    let state = ToyState::start(grid, goals);
    let params = ToyParams::zeros();
    let group = evaluate_group(
        group_of(&state, &["set 1 1 R", "set 2 2 G", "set 2 3 G", "set 4 4 K"]),
        &GridReward,
        RewardWeights::default(),
    )
    .unwrap();
    assert_eq!(group.advantages().iter().filter(|a| **a > 0.0).count(), 1);
    let winner = group.candidates[0].action;
    let grad = grpo_gradient(&params, &group, &params, 0.0, &vocab).unwrap();
    let stepped = ToyParams::from_vec(params.theta.iter().zip(&grad).map(|(t, g)| t + 0.1 * g).collect()).unwrap();
    let phi = state.feature_matrix(&vocab);
    let before = log_softmax(&logits(&params, &phi))[winner];
    let after = log_softmax(&logits(&stepped, &phi))[winner];
    assert!(after > before);
}

#[test]
fn training_is_seeded() {
    let config = TrainConfig {
        iterations: 10,
        ..TrainConfig::default()
    };
    assert_eq!(train_toy(&config).unwrap(), train_toy(&config).unwrap());
}
