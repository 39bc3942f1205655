use mira_core::grid::*;
use proptest::prelude::*;

const SYMBOLS: [char; 6] = ['R', 'G', 'B', 'W', 'K', 'Y'];

fn grid_strategy() -> impl Strategy<Value = (usize, usize, Vec<char>)> {
    (1usize..=5, 1usize..=5).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), prop::collection::vec(prop::sample::select(SYMBOLS.to_vec()), r * c))
    })
}

fn to_grid(rows: usize, cols: usize, cells: &[char]) -> Grid {
    let text: Vec<String> = cells.chunks(cols).map(|row| row.iter().collect()).collect();
    let g = Grid::parse(&text.join("/")).unwrap();
    assert_eq!((g.rows(), g.cols()), (rows, cols));
    g
}

fn chars(g: &Grid) -> Vec<char> {
    g.cells().iter().map(|s| s.as_char()).collect()
}

/// Straight-line reference semantics over character cells.
fn reference_apply(cols: usize, cells: &[char], op: &GridOp) -> Vec<char> {
    let mut out = cells.to_vec();
    match *op {
        GridOp::Set { row, col, sym } => out[(row - 1) * cols + col - 1] = sym.as_char(),
        GridOp::Recolor { from, to } => {
            for c in out.iter_mut().filter(|c| **c == from.as_char()) {
                *c = to.as_char();
            }
        }
        GridOp::FillRow { row, sym } => {
            for c in &mut out[(row - 1) * cols..row * cols] {
                *c = sym.as_char();
            }
        }
        GridOp::Noop => {}
    }
    out
}

proptest! {
    #[test]
    fn every_op_matches_reference_semantics((rows, cols, cells) in grid_strategy()) {
        let grid = to_grid(rows, cols, &cells);
        for op in GridOp::enumerate(rows, cols) {
            let applied = grid_apply(&grid, &op).unwrap();
            prop_assert_eq!(chars(&applied), reference_apply(cols, &cells, &op), "{}", op);
            prop_assert_eq!(GridOp::parse(&op.to_string()).unwrap(), op);
            prop_assert_eq!(GridOp::parse(&op.to_natural()).unwrap(), op);
        }
    }

    #[test]
    fn grid_text_round_trips((rows, cols, cells) in grid_strategy()) {
        let grid = to_grid(rows, cols, &cells);
        prop_assert_eq!(Grid::parse(&grid.to_text()).unwrap(), grid);
    }

    #[test]
    fn scores_are_bounded_and_counted(seed in 0u64..10_000, g in 1usize..=4, other in grid_strategy()) {
        let task = random_task(seed, 4, 4, g, 0.3);
        let (_, _, cells) = other;
        let mut edited_cells: Vec<char> = chars(&task.grid);
        for (i, c) in cells.iter().enumerate().take(edited_cells.len()) {
            if i % 3 == 0 {
                edited_cells[i] = *c;
            }
        }
        let edited = to_grid(4, 4, &edited_cells);
        let sc = grid_sc(&edited, &task.goals);
        let held = task.goals.goals().iter().filter(|goal| match **goal {
            Goal::Cell { row, col, sym } => edited_cells[(row - 1) * 4 + col - 1] == sym.as_char(),
            Goal::Absent { sym, .. } => !edited_cells.contains(&sym.as_char()),
        }).count();
        prop_assert_eq!(sc, 10.0 * held as f64 / g as f64);
        let pq = grid_pq(&task.grid, &edited, &task.goals).unwrap();
        prop_assert!((0.0..=10.0).contains(&pq));
        prop_assert_eq!(grid_pq(&task.grid, &task.grid, &task.goals).unwrap(), 10.0);
    }

    #[test]
    fn oracle_plan_solves_each_goal_with_one_op(seed in 0u64..10_000, g in 1usize..=5) {
        let task = random_task(seed, 4, 4, g, 0.25);
        prop_assert_eq!(grid_sc(&task.grid, &task.goals), 0.0);
        let plan = open_loop_plan(&task.grid, &task.goals);
        prop_assert_eq!(plan.len(), g);
        let mut grid = task.grid.clone();
        for (k, op) in plan.iter().enumerate() {
            grid = grid_apply(&grid, op).unwrap();
            prop_assert_eq!(task.goals.satisfied_count(&grid), k + 1);
        }
        prop_assert_eq!(grid_pq(&task.grid, &grid, &task.goals).unwrap(), 10.0);
    }

    #[test]
    fn faults_flip_at_most_one_unprotected_cell(
        (rows, cols, cells) in grid_strategy(),
        rate in 0.0f64..=1.0,
        seed in any::<u64>(),
        mask_bits in any::<u32>(),
    ) {
        let grid = to_grid(rows, cols, &cells);
        let protected: Vec<bool> = (0..grid.len()).map(|i| mask_bits >> i & 1 == 1).collect();
        let out = inject_fault(&grid, rate, seed, &protected);
        let changed: Vec<usize> = (0..grid.len()).filter(|&i| grid.cells()[i] != out.grid.cells()[i]).collect();
        prop_assert!(changed.len() <= 1);
        prop_assert_eq!(changed.len(), usize::from(out.flipped.is_some()));
        for i in changed {
            prop_assert!(!protected[i]);
        }
        prop_assert_eq!(inject_fault(&grid, rate, seed, &protected), out);
    }
}
