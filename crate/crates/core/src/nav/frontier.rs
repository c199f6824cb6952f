use crate::grid::{BitGrid, Cell, GridFrame};

use super::fmm::march;
use super::NavError;

/// Explored, traversable cells 4-adjacent to an unexplored cell, row-major.
pub fn frontier_cells(explored: &BitGrid, traversable: &BitGrid) -> Vec<Cell> {
    let mut out = Vec::new();
    for r in 0..explored.rows() {
        for c in 0..explored.cols() {
            let cell = Cell::new(r, c);
            if is_frontier(explored, traversable, cell) {
                out.push(cell);
            }
        }
    }
    out
}

fn is_frontier(explored: &BitGrid, traversable: &BitGrid, cell: Cell) -> bool {
    *explored.get(cell) && *traversable.get(cell) && explored.neighbors4(cell).any(|n| !*explored.get(n))
}

/// Frontier cell geodesically closest to `robot`; ties within 1e-9 m go to
/// the smaller row-major index. Cells set in `exclude` are skipped.
pub fn select_frontier_goal(
    explored: &BitGrid,
    traversable: &BitGrid,
    robot: Cell,
    frame: GridFrame,
    exclude: Option<&BitGrid>,
) -> Result<(Cell, f64), NavError> {
    const TIE: f64 = 1e-9;
    let mut best: Option<(f64, Cell)> = None;
    march(traversable, &[robot], frame.h, |cell, d| {
        if let Some((bd, _)) = best {
            if d > bd + TIE {
                return false;
            }
        }
        let excluded = exclude.is_some_and(|e| *e.get(cell));
        if !excluded && is_frontier(explored, traversable, cell) {
            match best {
                Some((_, bc)) if bc <= cell => {}
                Some((bd, _)) => best = Some((bd, cell)),
                None => best = Some((d, cell)),
            }
        }
        true
    });
    best.map(|(d, c)| (c, d)).ok_or(NavError::ExplorationExhausted)
}
