use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;

use super::{Grid, GridError, Symbol};

/// One atomic grid edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GridOp {
    Set { row: usize, col: usize, sym: Symbol },
    Recolor { from: Symbol, to: Symbol },
    FillRow { row: usize, sym: Symbol },
    Noop,
}

struct Pattern {
    re: Regex,
    build: fn(&regex::Captures<'_>) -> Option<GridOp>,
}

fn num(c: &regex::Captures<'_>, i: usize) -> Option<usize> {
    c.get(i)?.as_str().parse().ok()
}

fn sym(c: &regex::Captures<'_>, i: usize) -> Option<Symbol> {
    Symbol::parse_word(c.get(i)?.as_str())
}

fn set_op(c: &regex::Captures<'_>) -> Option<GridOp> {
    Some(GridOp::Set {
        row: num(c, 1)?,
        col: num(c, 2)?,
        sym: sym(c, 3)?,
    })
}

fn recolor_op(c: &regex::Captures<'_>) -> Option<GridOp> {
    Some(GridOp::Recolor {
        from: sym(c, 1)?,
        to: sym(c, 2)?,
    })
}

fn fill_op(c: &regex::Captures<'_>) -> Option<GridOp> {
    Some(GridOp::FillRow {
        row: num(c, 1)?,
        sym: sym(c, 2)?,
    })
}

const CELL: &str = r"cell\s*\(\s*(\d+)\s*,\s*(\d+)\s*\)";
const COLOR: &str = r"([a-z]+)";

// Compact syntax first, then the natural-language templates.
static PATTERNS: LazyLock<Vec<Pattern>> = LazyLock::new(|| {
    let p = |src: String, build: fn(&regex::Captures<'_>) -> Option<GridOp>| Pattern {
        re: Regex::new(&format!("^(?i){src}$")).unwrap(),
        build,
    };
    vec![
        p(r"set\s+(\d+)\s+(\d+)\s+([a-z]+)".into(), set_op),
        p(r"recolor\s+([a-z]+)\s+([a-z]+)".into(), recolor_op),
        p(r"fill_row\s+(\d+)\s+([a-z]+)".into(), fill_op),
        p(format!(r"(?:change|set|paint|turn)\s+{CELL}\s+(?:to|into)\s+{COLOR}"), set_op),
        p(format!(r"(?:make|paint|turn|color|colour)\s+{CELL}\s+{COLOR}"), set_op),
        p(
            format!(r"(?:recolor|recolour|change|turn)\s+(?:every|all)\s+{COLOR}(?:\s+cells?)?\s+(?:to|into)\s+{COLOR}"),
            recolor_op,
        ),
        p(
            format!(r"replace\s+(?:every|all)\s+{COLOR}(?:\s+cells?)?\s+with\s+{COLOR}"),
            recolor_op,
        ),
        p(format!(r"fill\s+row\s+(\d+)\s+with\s+{COLOR}"), fill_op),
        p(format!(r"(?:paint|make)\s+row\s+(\d+)\s+{COLOR}"), fill_op),
    ]
});

impl GridOp {
    /// Parses compact (`set 1 1 R`) or templated ("Change cell (1,1) to red")
    /// instruction text. Trailing punctuation and surrounding whitespace are
    /// ignored.
    pub fn parse(text: &str) -> Result<GridOp, GridError> {
        let t = normalize(text);
        let lower = t.to_ascii_lowercase();
        if lower == "noop" || lower == "do nothing" || lower == "leave it unchanged" {
            return Ok(GridOp::Noop);
        }
        for pat in PATTERNS.iter() {
            if let Some(caps) = pat.re.captures(&t) {
                if let Some(op) = (pat.build)(&caps) {
                    if let GridOp::Recolor { from, to } = op {
                        if from == to {
                            return Err(GridError::SameRecolor(from));
                        }
                    }
                    return Ok(op);
                }
            }
        }
        Err(GridError::UnparseableOp(text.to_string()))
    }

    pub fn apply(&self, grid: &Grid) -> Result<Grid, GridError> {
        let mut out = grid.clone();
        match *self {
            GridOp::Set { row, col, sym } => out.set(row, col, sym)?,
            GridOp::Recolor { from, to } => {
                if from == to {
                    return Err(GridError::SameRecolor(from));
                }
                for c in out.cells_mut() {
                    if *c == from {
                        *c = to;
                    }
                }
            }
            GridOp::FillRow { row, sym } => {
                grid.check(row, 1)?;
                for col in 1..=grid.cols() {
                    out.set(row, col, sym)?;
                }
            }
            GridOp::Noop => {}
        }
        Ok(out)
    }

    /// Templated natural-language rendering.
    pub fn to_natural(&self) -> String {
        match *self {
            GridOp::Set { row, col, sym } => {
                format!("Change cell ({row},{col}) to {}", sym.color_name())
            }
            GridOp::Recolor { from, to } => format!(
                "Recolor every {} cell to {}",
                from.color_name(),
                to.color_name()
            ),
            GridOp::FillRow { row, sym } => format!("Fill row {row} with {}", sym.color_name()),
            GridOp::Noop => "Do nothing".to_string(),
        }
    }

    /// Every op expressible on a `rows x cols` grid, in a fixed order.
    pub fn enumerate(rows: usize, cols: usize) -> Vec<GridOp> {
        let mut ops = Vec::new();
        for row in 1..=rows {
            for col in 1..=cols {
                for sym in Symbol::ALL {
                    ops.push(GridOp::Set { row, col, sym });
                }
            }
        }
        for from in Symbol::ALL {
            for to in Symbol::ALL {
                if from != to {
                    ops.push(GridOp::Recolor { from, to });
                }
            }
        }
        for row in 1..=rows {
            for sym in Symbol::ALL {
                ops.push(GridOp::FillRow { row, sym });
            }
        }
        ops.push(GridOp::Noop);
        ops
    }
}

pub(crate) fn normalize(text: &str) -> String {
    let t = text.trim().trim_end_matches(['.', '!', ';']).trim();
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl fmt::Display for GridOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridOp::Set { row, col, sym } => write!(f, "set {row} {col} {sym}"),
            GridOp::Recolor { from, to } => write!(f, "recolor {from} {to}"),
            GridOp::FillRow { row, sym } => write!(f, "fill_row {row} {sym}"),
            GridOp::Noop => f.write_str("noop"),
        }
    }
}

impl FromStr for GridOp {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GridOp::parse(s)
    }
}
