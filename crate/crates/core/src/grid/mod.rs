//! Deterministic symbol-grid environment.
//!
//! Grids stand in for images, [`GridOp`]s for atomic edit instructions and
//! [`GoalSet`]s for complex instructions. Everything here is a pure function
//! so it can back brute-force oracles in tests.

mod fault;
mod goals;
mod op;
mod oracle;
mod score;
mod task;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fault::{inject_fault, FaultOutcome};
pub use goals::{split_clauses, Goal, GoalSet, CONNECTIVES};
pub use op::GridOp;
pub use oracle::{open_loop_plan, oracle_policy, OracleAction};
pub use score::{footprint, grid_pq, grid_sc, Footprint};
pub use task::{random_task, Task};

/// Default grid edge used by the synthetic tasks.
pub const DEFAULT_ROWS: usize = 4;
pub const DEFAULT_COLS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GridError {
    #[error("malformed grid text: {0}")]
    Malformed(String),
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("index ({row},{col}) out of range for {rows}x{cols} grid")]
    OutOfRange {
        row: usize,
        col: usize,
        rows: usize,
        cols: usize,
    },
    #[error("unparseable edit instruction: {0:?}")]
    UnparseableOp(String),
    #[error("unparseable goal clause: {0:?}")]
    UnparseableGoal(String),
    #[error("recolor source and target must differ ({0})")]
    SameRecolor(Symbol),
    #[error("goal set is empty")]
    EmptyGoals,
    #[error("goals are mutually unsatisfiable: {0}")]
    Unsatisfiable(String),
    #[error("grid dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Cell symbol. The alphabet is fixed at six colours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    R,
    G,
    B,
    W,
    K,
    Y,
}

impl Symbol {
    pub const ALL: [Symbol; 6] = [
        Symbol::R,
        Symbol::G,
        Symbol::B,
        Symbol::W,
        Symbol::K,
        Symbol::Y,
    ];

    pub fn as_char(self) -> char {
        match self {
            Symbol::R => 'R',
            Symbol::G => 'G',
            Symbol::B => 'B',
            Symbol::W => 'W',
            Symbol::K => 'K',
            Symbol::Y => 'Y',
        }
    }

    pub fn from_char(c: char) -> Option<Symbol> {
        match c {
            'R' => Some(Symbol::R),
            'G' => Some(Symbol::G),
            'B' => Some(Symbol::B),
            'W' => Some(Symbol::W),
            'K' => Some(Symbol::K),
            'Y' => Some(Symbol::Y),
            _ => None,
        }
    }

    /// Colour name used by the natural-language templates.
    pub fn color_name(self) -> &'static str {
        match self {
            Symbol::R => "red",
            Symbol::G => "green",
            Symbol::B => "blue",
            Symbol::W => "white",
            Symbol::K => "black",
            Symbol::Y => "yellow",
        }
    }

    /// Accepts a single-letter code or a colour name, case-insensitively.
    pub fn parse_word(word: &str) -> Option<Symbol> {
        let w = word.trim().to_ascii_lowercase();
        if w.len() == 1 {
            return Symbol::from_char(w.chars().next()?.to_ascii_uppercase());
        }
        Symbol::ALL.into_iter().find(|s| s.color_name() == w)
    }

    pub fn index(self) -> usize {
        Symbol::ALL.iter().position(|s| *s == self).unwrap()
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Row-major symbol grid, written as rows joined by `/` (e.g. `RW/WK`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<Symbol>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, cells: Vec<Symbol>) -> Result<Self, GridError> {
        if rows == 0 || cols == 0 {
            return Err(GridError::Malformed("grid must have at least one cell".into()));
        }
        if cells.len() != rows * cols {
            return Err(GridError::Malformed(format!(
                "{} cells for {rows}x{cols} grid",
                cells.len()
            )));
        }
        Ok(Self { rows, cols, cells })
    }

    pub fn filled(rows: usize, cols: usize, sym: Symbol) -> Self {
        assert!(rows > 0 && cols > 0);
        Self {
            rows,
            cols,
            cells: vec![sym; rows * cols],
        }
    }

    pub fn parse(text: &str) -> Result<Self, GridError> {
        let mut cells = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for row in text.split('/') {
            if row.is_empty() {
                return Err(GridError::Malformed(format!("empty row in {text:?}")));
            }
            let mut n = 0;
            for c in row.chars() {
                let sym =
                    Symbol::from_char(c).ok_or_else(|| GridError::UnknownSymbol(c.to_string()))?;
                cells.push(sym);
                n += 1;
            }
            match cols {
                None => cols = Some(n),
                Some(expected) if expected != n => {
                    return Err(GridError::Malformed(format!(
                        "ragged rows: expected {expected} columns, found {n}"
                    )))
                }
                _ => {}
            }
            rows += 1;
        }
        Grid::new(rows, cols.unwrap_or(0), cells)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[Symbol] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// 1-based accessor.
    pub fn get(&self, row: usize, col: usize) -> Result<Symbol, GridError> {
        self.check(row, col)?;
        Ok(self.cells[(row - 1) * self.cols + (col - 1)])
    }

    pub fn set(&mut self, row: usize, col: usize, sym: Symbol) -> Result<(), GridError> {
        self.check(row, col)?;
        self.cells[(row - 1) * self.cols + (col - 1)] = sym;
        Ok(())
    }

    pub(crate) fn check(&self, row: usize, col: usize) -> Result<(), GridError> {
        if row == 0 || col == 0 || row > self.rows || col > self.cols {
            return Err(GridError::OutOfRange {
                row,
                col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }

    /// 1-based coordinates of a flat index.
    pub fn coords(&self, flat: usize) -> (usize, usize) {
        (flat / self.cols + 1, flat % self.cols + 1)
    }

    pub fn contains(&self, sym: Symbol) -> bool {
        self.cells.contains(&sym)
    }

    pub fn same_shape(&self, other: &Grid) -> Result<(), GridError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(GridError::DimensionMismatch(
                self.rows, self.cols, other.rows, other.cols,
            ));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub(crate) fn cells_mut(&mut self) -> &mut [Symbol] {
        &mut self.cells
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, row) in self.cells.chunks(self.cols).enumerate() {
            if i > 0 {
                f.write_str("/")?;
            }
            for s in row {
                write!(f, "{s}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Grid {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Grid::parse(s)
    }
}

/// Applies an edit to a grid, returning the edited copy.
pub fn grid_apply(grid: &Grid, op: &GridOp) -> Result<Grid, GridError> {
    op.apply(grid)
}
