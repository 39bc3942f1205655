use super::{Goal, GoalSet, Grid, GridOp, Symbol};

/// Decision of the oracle policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleAction {
    Edit(GridOp),
    Stop,
}

/// Fixes the first unsatisfied goal, or stops once every goal holds.
///
/// The original grid is part of the observation but the oracle does not need
/// it: goals are absolute predicates over the current grid.
pub fn oracle_policy(current: &Grid, _original: &Grid, goals: &GoalSet) -> OracleAction {
    let Some(goal) = goals.first_unsatisfied(current) else {
        return OracleAction::Stop;
    };
    let op = match *goal {
        Goal::Cell { row, col, sym } => GridOp::Set { row, col, sym },
        Goal::Absent { sym, replacement } => GridOp::Recolor {
            from: sym,
            to: recolor_target(current, goals, sym, replacement),
        },
    };
    let before = goals.satisfied_count(current);
    debug_assert!(
        op.apply(current)
            .map(|g| goals.satisfied_count(&g) > before)
            .unwrap_or(false),
        "oracle op {op} made no progress"
    );
    OracleAction::Edit(op)
}

fn recolor_target(current: &Grid, goals: &GoalSet, from: Symbol, requested: Option<Symbol>) -> Symbol {
    let absent = goals.absent_symbols();
    if let Some(to) = requested {
        if !absent.contains(&to) && to != from {
            return to;
        }
    }
    // Avoid symbols that would incidentally satisfy other pending cell goals,
    // so one edit fixes exactly one goal when possible.
    let incidental: Vec<Symbol> = goals
        .goals()
        .iter()
        .filter_map(|g| match *g {
            Goal::Cell { row, col, sym } if current.get(row, col).ok() == Some(from) => Some(sym),
            _ => None,
        })
        .collect();
    let allowed = |s: &Symbol| *s != from && !absent.contains(s);
    Symbol::ALL
        .into_iter()
        .filter(allowed)
        .find(|s| !incidental.contains(s))
        .or_else(|| Symbol::ALL.into_iter().find(allowed))
        .expect("satisfiable goal set leaves a free symbol")
}

/// The full plan the oracle would execute on a fault-free editor, fixed at
/// step 1. Used as the open-loop foil.
pub fn open_loop_plan(original: &Grid, goals: &GoalSet) -> Vec<GridOp> {
    let mut current = original.clone();
    let mut plan = Vec::new();
    while let OracleAction::Edit(op) = oracle_policy(&current, original, goals) {
        current = op.apply(&current).expect("oracle ops are in range");
        plan.push(op);
    }
    plan
}
