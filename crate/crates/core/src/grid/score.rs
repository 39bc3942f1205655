use super::{Goal, GoalSet, Grid, GridError, Symbol};

/// Cells whose change is mandated by some goal, as a row-major mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Footprint(Vec<bool>);

impl Footprint {
    pub fn contains(&self, flat: usize) -> bool {
        self.0[flat]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

/// Goal footprint for an (original, edited) pair. Cell goals own their cell;
/// absent goals own every cell whose original or edited symbol is the absent
/// symbol or its recorded replacement.
pub fn footprint(original: &Grid, edited: &Grid, goals: &GoalSet) -> Result<Footprint, GridError> {
    original.same_shape(edited)?;
    let mut mask = vec![false; original.len()];
    for goal in goals.goals() {
        match *goal {
            Goal::Cell { row, col, .. } => mask[(row - 1) * original.cols() + (col - 1)] = true,
            Goal::Absent { sym, replacement } => {
                let owns = |s: Symbol| s == sym || Some(s) == replacement;
                for (i, (a, b)) in original.cells().iter().zip(edited.cells()).enumerate() {
                    if owns(*a) || owns(*b) {
                        mask[i] = true;
                    }
                }
            }
        }
    }
    Ok(Footprint(mask))
}

/// Semantic consistency on the 0-10 scale: share of satisfied goals.
pub fn grid_sc(grid: &Grid, goals: &GoalSet) -> f64 {
    10.0 * goals.satisfied_count(grid) as f64 / goals.len() as f64
}

/// Perceptual quality on the 0-10 scale: penalises changed cells outside the
/// goal footprint.
pub fn grid_pq(original: &Grid, edited: &Grid, goals: &GoalSet) -> Result<f64, GridError> {
    let fp = footprint(original, edited, goals)?;
    let collateral = original
        .cells()
        .iter()
        .zip(edited.cells())
        .enumerate()
        .filter(|(i, (a, b))| a != b && !fp.contains(*i))
        .count();
    let pq = 10.0 * (1.0 - collateral as f64 / original.len() as f64);
    Ok(pq.clamp(0.0, 10.0))
}
