use std::sync::LazyLock;

use regex::Regex;

use super::op::normalize;
use super::{Grid, GridError, GridOp, Symbol};

/// Connectives the clause splitter understands. Rendering and rewriting only
/// ever join clauses with one of these.
pub const CONNECTIVES: [&str; 6] = [
    " then ",
    ", then ",
    " and ",
    ", and then ",
    "; then ",
    ", after that ",
];

static SPLIT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:\s*[,;]\s*|\s+)(?:and then|after that,?|then|and)\s+|\s*;\s*").unwrap()
});

static ABSENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?i)(?:remove|erase|eliminate)\s+(?:all|every|any)\s+([a-z]+)(?:\s+cells?)?$")
        .unwrap()
});

/// Splits a complex instruction into its atomic clauses.
pub fn split_clauses(text: &str) -> Vec<String> {
    SPLIT
        .split(text.trim())
        .map(normalize)
        .filter(|s| !s.is_empty())
        .collect()
}

/// A single predicate over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Goal {
    /// `cell(r,c) = sym`, 1-based.
    Cell { row: usize, col: usize, sym: Symbol },
    /// `absent(sym)`. A replacement colour is recorded when the goal came from
    /// a recolor instruction; it does not change satisfaction.
    Absent {
        sym: Symbol,
        replacement: Option<Symbol>,
    },
}

impl Goal {
    pub fn is_satisfied(&self, grid: &Grid) -> bool {
        match *self {
            Goal::Cell { row, col, sym } => grid.get(row, col).map(|s| s == sym).unwrap_or(false),
            Goal::Absent { sym, .. } => !grid.contains(sym),
        }
    }

    pub fn render(&self) -> String {
        match *self {
            Goal::Cell { row, col, sym } => format!("make cell ({row},{col}) {}", sym.color_name()),
            Goal::Absent {
                sym,
                replacement: None,
            } => format!("remove all {}", sym.color_name()),
            Goal::Absent {
                sym,
                replacement: Some(to),
            } => format!("replace every {} with {}", sym.color_name(), to.color_name()),
        }
    }

    /// Goals expressed by one clause. A `noop` clause yields none and a row
    /// fill yields one cell goal per column.
    pub fn parse_clause(clause: &str, cols: usize) -> Result<Vec<Goal>, GridError> {
        let text = normalize(clause);
        if let Some(c) = ABSENT.captures(&text) {
            let sym = Symbol::parse_word(&c[1])
                .ok_or_else(|| GridError::UnparseableGoal(clause.to_string()))?;
            return Ok(vec![Goal::Absent {
                sym,
                replacement: None,
            }]);
        }
        let op = GridOp::parse(&text).map_err(|_| GridError::UnparseableGoal(clause.to_string()))?;
        Ok(match op {
            GridOp::Set { row, col, sym } => vec![Goal::Cell { row, col, sym }],
            GridOp::Recolor { from, to } => vec![Goal::Absent {
                sym: from,
                replacement: Some(to),
            }],
            GridOp::FillRow { row, sym } => (1..=cols).map(|col| Goal::Cell { row, col, sym }).collect(),
            GridOp::Noop => Vec::new(),
        })
    }
}

/// Ordered, nonempty, satisfiable predicate list for a fixed grid shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalSet {
    goals: Vec<Goal>,
    rows: usize,
    cols: usize,
}

impl GoalSet {
    pub fn new(goals: Vec<Goal>, rows: usize, cols: usize) -> Result<Self, GridError> {
        if goals.is_empty() {
            return Err(GridError::EmptyGoals);
        }
        for g in &goals {
            if let Goal::Cell { row, col, .. } = *g {
                if row == 0 || col == 0 || row > rows || col > cols {
                    return Err(GridError::OutOfRange { row, col, rows, cols });
                }
            }
        }
        let set = Self { goals, rows, cols };
        // Exhaustive search is affordable up to 6^4 grids.
        let ok = if rows * cols <= 4 {
            set.brute_force_satisfiable()
        } else {
            set.witness().is_ok()
        };
        if !ok {
            return Err(GridError::Unsatisfiable(set.witness().err().unwrap_or_default()));
        }
        Ok(set)
    }

    /// Parses a complex instruction against a grid shape.
    pub fn parse(text: &str, rows: usize, cols: usize) -> Result<Self, GridError> {
        let mut goals = Vec::new();
        for clause in split_clauses(text) {
            goals.extend(Goal::parse_clause(&clause, cols)?);
        }
        GoalSet::new(goals, rows, cols)
    }

    pub fn for_grid(text: &str, grid: &Grid) -> Result<Self, GridError> {
        GoalSet::parse(text, grid.rows(), grid.cols())
    }

    pub fn goals(&self) -> &[Goal] {
        &self.goals
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn satisfied_count(&self, grid: &Grid) -> usize {
        self.goals.iter().filter(|g| g.is_satisfied(grid)).count()
    }

    pub fn all_satisfied(&self, grid: &Grid) -> bool {
        self.goals.iter().all(|g| g.is_satisfied(grid))
    }

    pub fn first_unsatisfied(&self, grid: &Grid) -> Option<&Goal> {
        self.goals.iter().find(|g| !g.is_satisfied(grid))
    }

    pub fn absent_symbols(&self) -> Vec<Symbol> {
        let mut out: Vec<Symbol> = self
            .goals
            .iter()
            .filter_map(|g| match g {
                Goal::Absent { sym, .. } => Some(*sym),
                _ => None,
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Renders the goals as a complex instruction joined with `connective`.
    pub fn render_with(&self, connective: &str) -> String {
        let clauses: Vec<String> = self.goals.iter().map(Goal::render).collect();
        let mut text = clauses.join(connective);
        if let Some(first) = text.get(..1) {
            text = first.to_uppercase() + &text[1..];
        }
        text
    }

    pub fn render(&self) -> String {
        self.render_with(", then ")
    }

    /// Builds a grid satisfying every goal, or explains the conflict.
    pub fn witness(&self) -> Result<Grid, String> {
        let absent = self.absent_symbols();
        let mut fixed: Vec<Option<Symbol>> = vec![None; self.rows * self.cols];
        for g in &self.goals {
            if let Goal::Cell { row, col, sym } = *g {
                if absent.contains(&sym) {
                    return Err(format!("cell ({row},{col}) must be {sym} but {sym} must be absent"));
                }
                let slot = &mut fixed[(row - 1) * self.cols + (col - 1)];
                match slot {
                    Some(prev) if *prev != sym => {
                        return Err(format!("cell ({row},{col}) required to be both {prev} and {sym}"))
                    }
                    _ => *slot = Some(sym),
                }
            }
        }
        let filler = Symbol::ALL.into_iter().find(|s| !absent.contains(s));
        let mut cells = Vec::with_capacity(fixed.len());
        for slot in fixed {
            match slot.or(filler) {
                Some(s) => cells.push(s),
                None => return Err("every symbol is required to be absent".into()),
            }
        }
        let grid = Grid::new(self.rows, self.cols, cells).map_err(|e| e.to_string())?;
        debug_assert!(self.all_satisfied(&grid));
        Ok(grid)
    }

    fn brute_force_satisfiable(&self) -> bool {
        let n = self.rows * self.cols;
        let total = 6usize.pow(n as u32);
        (0..total).any(|mut code| {
            let cells = (0..n)
                .map(|_| {
                    let s = Symbol::ALL[code % 6];
                    code /= 6;
                    s
                })
                .collect();
            let grid = Grid::new(self.rows, self.cols, cells).unwrap();
            self.all_satisfied(&grid)
        })
    }
}
