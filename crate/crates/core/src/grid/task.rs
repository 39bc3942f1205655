use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Goal, GoalSet, Grid, Symbol};

/// A synthetic editing task: a starting grid and the goals to reach.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub grid: Grid,
    pub goals: GoalSet,
}

impl Task {
    pub fn instruction(&self) -> String {
        self.goals.render()
    }
}

/// Generates a task with `n_goals` goals, none satisfied by the starting grid,
/// such that each oracle edit satisfies exactly one goal.
///
/// `absent_share` is the probability that a goal is an `absent` predicate
/// rather than a cell predicate.
pub fn random_task(seed: u64, rows: usize, cols: usize, n_goals: usize, absent_share: f64) -> Task {
    assert!(n_goals >= 1 && n_goals <= rows * cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        if let Some(task) = try_task(&mut rng, rows, cols, n_goals, absent_share) {
            return task;
        }
    }
}

fn try_task(rng: &mut ChaCha8Rng, rows: usize, cols: usize, n_goals: usize, absent_share: f64) -> Option<Task> {
    let cells: Vec<Symbol> = (0..rows * cols)
        .map(|_| *Symbol::ALL.choose(rng).unwrap())
        .collect();
    let grid = Grid::new(rows, cols, cells).ok()?;
    let mut positions: Vec<usize> = (0..grid.len()).collect();
    positions.shuffle(rng);
    let mut goals = Vec::new();
    let mut absent: Vec<Symbol> = Vec::new();
    let mut cell_positions: Vec<usize> = Vec::new();
    for _ in 0..n_goals {
        if rng.gen::<f64>() < absent_share {
            let sym = *Symbol::ALL.choose(rng).unwrap();
            absent.push(sym);
            goals.push(Goal::Absent { sym, replacement: None });
        } else {
            let flat = positions.pop()?;
            let current = grid.cells()[flat];
            let choices: Vec<Symbol> = Symbol::ALL.into_iter().filter(|s| *s != current).collect();
            let sym = *choices.choose(rng).unwrap();
            let (row, col) = grid.coords(flat);
            cell_positions.push(flat);
            goals.push(Goal::Cell { row, col, sym });
        }
    }
    // Absent symbols: distinct, present at two or more cells that no cell goal
    // touches, and never demanded by a cell goal.
    let mut sorted = absent.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != absent.len() {
        return None;
    }
    for sym in &absent {
        let free_hits = grid
            .cells()
            .iter()
            .enumerate()
            .filter(|(i, s)| *s == sym && !cell_positions.contains(i))
            .count();
        let on_goal_cells = cell_positions.iter().any(|i| grid.cells()[*i] == *sym);
        if free_hits < 2 || on_goal_cells {
            return None;
        }
        if goals.iter().any(|g| matches!(g, Goal::Cell { sym: s, .. } if s == sym)) {
            return None;
        }
    }
    let goals = GoalSet::new(goals, rows, cols).ok()?;
    if goals.satisfied_count(&grid) != 0 {
        return None;
    }
    Some(Task { grid, goals })
}
