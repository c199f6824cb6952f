use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::grid::{BitGrid, Cell, Grid, GridFrame};

use super::NavError;

/// Geodesic distance in meters to the nearest goal cell; `f64::INFINITY`
/// where unreachable (or not computed under early termination).
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    pub values: Grid<f64>,
    pub goals: Vec<Cell>,
    pub frame: GridFrame,
}

impl DistanceField {
    pub fn at(&self, cell: Cell) -> f64 {
        *self.values.get(cell)
    }

    /// Value at a metric point; infinite outside the grid.
    pub fn at_point(&self, x: f64, y: f64) -> f64 {
        let (r, c) = self.frame.locate(x, y);
        self.values.checked(r, c).map_or(f64::INFINITY, |cell| self.at(cell))
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    d: f64,
    idx: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // reversed so the max-heap pops the smallest distance, then lowest index
    fn cmp(&self, other: &Self) -> Ordering {
        other.d.total_cmp(&self.d).then(other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Solves the upwind quadratic for a cell whose smallest known horizontal and
/// vertical neighbor values are `a` and `b`.
#[inline]
pub(crate) fn upwind(a: f64, b: f64, h: f64) -> f64 {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    if b - a < h {
        0.5 * (a + b + (2.0 * h * h - (b - a) * (b - a)).sqrt())
    } else {
        a + h
    }
}

/// Fast marching from `seeds` over traversable cells. Seeds are accepted even
/// when blocked. `visit` sees each cell as it is frozen, in nondecreasing
/// distance order, and may end the march early by returning false; cells not
/// frozen by then are left infinite.
pub fn march(traversable: &BitGrid, seeds: &[Cell], h: f64, mut visit: impl FnMut(Cell, f64) -> bool) -> Grid<f64> {
    let (rows, cols) = (traversable.rows(), traversable.cols());
    let n = rows * cols;
    let free = traversable.data();
    let mut value = vec![f64::INFINITY; n];
    let mut frozen = vec![false; n];
    let mut heap = BinaryHeap::new();
    for s in seeds {
        let idx = traversable.index(*s);
        value[idx] = 0.0;
        heap.push(Entry { d: 0.0, idx });
    }
    let known = |value: &[f64], frozen: &[bool], idx: usize| -> f64 {
        if frozen[idx] {
            value[idx]
        } else {
            f64::INFINITY
        }
    };
    while let Some(Entry { d, idx }) = heap.pop() {
        if frozen[idx] || d > value[idx] {
            continue;
        }
        frozen[idx] = true;
        if !visit(Cell::new(idx / cols, idx % cols), d) {
            break;
        }
        let (r, c) = (idx / cols, idx % cols);
        let mut relax = |nr: usize, nc: usize| {
            let ni = nr * cols + nc;
            if frozen[ni] || !free[ni] {
                return;
            }
            let mut a = f64::INFINITY;
            if nc > 0 {
                a = a.min(known(&value, &frozen, ni - 1));
            }
            if nc + 1 < cols {
                a = a.min(known(&value, &frozen, ni + 1));
            }
            let mut b = f64::INFINITY;
            if nr > 0 {
                b = b.min(known(&value, &frozen, ni - cols));
            }
            if nr + 1 < rows {
                b = b.min(known(&value, &frozen, ni + cols));
            }
            let nd = upwind(a, b, h);
            if nd < value[ni] {
                value[ni] = nd;
                heap.push(Entry { d: nd, idx: ni });
            }
        };
        if r > 0 {
            relax(r - 1, c);
        }
        if r + 1 < rows {
            relax(r + 1, c);
        }
        if c > 0 {
            relax(r, c - 1);
        }
        if c + 1 < cols {
            relax(r, c + 1);
        }
    }
    for (v, f) in value.iter_mut().zip(&frozen) {
        if !f {
            *v = f64::INFINITY;
        }
    }
    Grid::from_vec(rows, cols, value)
}

fn usable_goals(traversable: &BitGrid, goals: &[Cell]) -> Result<Vec<Cell>, NavError> {
    if goals.is_empty() {
        return Err(NavError::NoGoals);
    }
    let mut kept: Vec<Cell> = goals
        .iter()
        .copied()
        .filter(|g| traversable.contains(*g) && *traversable.get(*g))
        .collect();
    if kept.is_empty() {
        return Err(NavError::AllGoalsBlocked);
    }
    kept.sort();
    kept.dedup();
    Ok(kept)
}

/// Full multi-source distance field. Goals on obstacle cells are ignored.
pub fn fmm_distance_field(traversable: &BitGrid, goals: &[Cell], frame: GridFrame) -> Result<DistanceField, NavError> {
    let goals = usable_goals(traversable, goals)?;
    let values = march(traversable, &goals, frame.h, |_, _| true);
    Ok(DistanceField { values, goals, frame })
}

/// Like [`fmm_distance_field`] but stops once every cell within `margin` of
/// the value at `probe` is final. Values at or below that level are exact.
pub fn fmm_distance_field_until(
    traversable: &BitGrid,
    goals: &[Cell],
    frame: GridFrame,
    probe: Cell,
    margin: f64,
) -> Result<DistanceField, NavError> {
    let goals = usable_goals(traversable, goals)?;
    let mut limit = f64::INFINITY;
    let values = march(traversable, &goals, frame.h, |cell, d| {
        if d > limit {
            return false;
        }
        if cell == probe {
            limit = d + margin;
        }
        true
    });
    Ok(DistanceField { values, goals, frame })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_frame() -> GridFrame {
        GridFrame {
            x0: 0.0,
            y0: 0.0,
            h: 1.0,
        }
    }

    #[test]
    fn diagonal_neighbor_solves_quadratic() {
        let free = BitGrid::new(5, 5, true);
        let f = fmm_distance_field(&free, &[Cell::new(0, 0)], unit_frame()).unwrap();
        assert!((f.at(Cell::new(1, 1)) - (1.0 + 2f64.sqrt() / 2.0)).abs() < 1e-12);
        assert_eq!(f.at(Cell::new(0, 0)), 0.0);
    }

    #[test]
    fn adjacent_cell_is_one_step() {
        let free = BitGrid::new(4, 4, true);
        let frame = GridFrame {
            x0: 0.0,
            y0: 0.0,
            h: 0.05,
        };
        let f = fmm_distance_field(&free, &[Cell::new(2, 2)], frame).unwrap();
        assert!((f.at(Cell::new(2, 3)) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn wall_disconnects() {
        let mut free = BitGrid::new(5, 5, true);
        for r in 0..5 {
            free.set(Cell::new(r, 2), false);
        }
        let f = fmm_distance_field(&free, &[Cell::new(0, 0)], unit_frame()).unwrap();
        assert!(f.at(Cell::new(4, 4)).is_infinite());
        assert!(f.at(Cell::new(2, 2)).is_infinite());
    }

    #[test]
    fn blocked_goals_error() {
        let free = BitGrid::new(3, 3, false);
        assert_eq!(
            fmm_distance_field(&free, &[Cell::new(1, 1)], unit_frame()),
            Err(NavError::AllGoalsBlocked)
        );
    }

    #[test]
    fn early_termination_is_exact_below_limit() {
        let free = BitGrid::new(30, 30, true);
        let full = fmm_distance_field(&free, &[Cell::new(0, 0)], unit_frame()).unwrap();
        let part = fmm_distance_field_until(&free, &[Cell::new(0, 0)], unit_frame(), Cell::new(5, 5), 2.0).unwrap();
        let limit = full.at(Cell::new(5, 5)) + 2.0;
        for (a, b) in full.values.data().iter().zip(part.values.data()) {
            if *a <= limit {
                assert_eq!(a, b);
            } else {
                assert!(b.is_infinite() || b == a);
            }
        }
    }
}
