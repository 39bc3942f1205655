use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Grid, Symbol};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultOutcome {
    pub grid: Grid,
    /// 1-based coordinates of the flipped cell, if a fault fired.
    pub flipped: Option<(usize, usize)>,
}

/// With probability `rate`, flips one uniformly chosen unprotected cell to a
/// different uniformly chosen symbol. `protected` is a row-major mask of the
/// cells the current edit targets. Deterministic in `seed`.
pub fn inject_fault(grid: &Grid, rate: f64, seed: u64, protected: &[bool]) -> FaultOutcome {
    assert!((0.0..=1.0).contains(&rate), "fault rate must lie in [0,1]");
    debug_assert_eq!(protected.len(), grid.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fires = rng.gen::<f64>() < rate;
    let candidates: Vec<usize> = (0..grid.len()).filter(|i| !protected[*i]).collect();
    if !fires || candidates.is_empty() {
        return FaultOutcome {
            grid: grid.clone(),
            flipped: None,
        };
    }
    let cell = candidates[rng.gen_range(0..candidates.len())];
    let old = grid.cells()[cell];
    let others: Vec<Symbol> = Symbol::ALL.into_iter().filter(|s| *s != old).collect();
    let new = others[rng.gen_range(0..others.len())];
    let mut out = grid.clone();
    out.cells_mut()[cell] = new;
    FaultOutcome {
        flipped: Some(grid.coords(cell)),
        grid: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::parse("RGBW/KYRG/BWKY/RGBW").unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let g = grid();
        let free = vec![false; g.len()];
        for seed in 0..200 {
            let out = inject_fault(&g, 0.0, seed, &free);
            assert_eq!(out.grid, g);
            assert!(out.flipped.is_none());
        }
    }

    #[test]
    fn full_rate_flips_exactly_one_reproducibly() {
        let g = grid();
        let free = vec![false; g.len()];
        for seed in 0..50 {
            let a = inject_fault(&g, 1.0, seed, &free);
            let b = inject_fault(&g, 1.0, seed, &free);
            assert_eq!(a, b);
            let diff = g.cells().iter().zip(a.grid.cells()).filter(|(x, y)| x != y).count();
            assert_eq!(diff, 1);
        }
    }

    #[test]
    fn protected_cells_never_flip() {
        let g = grid();
        let mut protect = vec![true; g.len()];
        protect[5] = false;
        for seed in 0..100 {
            let out = inject_fault(&g, 1.0, seed, &protect);
            assert_eq!(out.flipped, Some(g.coords(5)));
        }
        let all = vec![true; g.len()];
        assert!(inject_fault(&g, 1.0, 3, &all).flipped.is_none());
    }

    #[test]
    fn monte_carlo_frequency() {
        let g = grid();
        let free = vec![false; g.len()];
        let fired = (0..10_000u64)
            .filter(|s| inject_fault(&g, 0.2, *s, &free).flipped.is_some())
            .count();
        let freq = fired as f64 / 10_000.0;
        assert!((freq - 0.2).abs() <= 0.01, "frequency {freq}");
    }
}
