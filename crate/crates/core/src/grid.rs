//! Row-major grids over the metric cell lattice.
//!
//! Row index grows with world `y`, column index with world `x`. Cell `(r, c)`
//! covers `[c*h, (c+1)*h) x [r*h, (r+1)*h)` in the frame the grid is anchored to.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Side length of one map / occupancy cell in meters.
pub const CELL_SIZE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

pub type BitGrid = Grid<bool>;

/// Placement of a grid in a metric frame: cell `(0, 0)` has its lower corner
/// at `(x0, y0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
}

impl GridFrame {
    /// Signed cell coordinates `(row, col)` containing a point.
    pub fn locate(&self, x: f64, y: f64) -> (isize, isize) {
        (
            ((y - self.y0) / self.h).floor() as isize,
            ((x - self.x0) / self.h).floor() as isize,
        )
    }

    pub fn center(&self, cell: Cell) -> (f64, f64) {
        (
            self.x0 + (cell.col as f64 + 0.5) * self.h,
            self.y0 + (cell.row as f64 + 0.5) * self.h,
        )
    }

    /// Frame of the sub-grid whose cell `(0, 0)` is `(row0, col0)` here.
    pub fn offset(&self, row0: usize, col0: usize) -> GridFrame {
        GridFrame {
            x0: self.x0 + col0 as f64 * self.h,
            y0: self.y0 + row0 as f64 * self.h,
            h: self.h,
        }
    }
}

impl<T: Clone> Grid<T> {
    pub fn new(rows: usize, cols: usize, fill: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "grid data length mismatch");
        Self { rows, cols, data }
    }

    /// Copies the `rows x cols` window starting at `(row0, col0)`.
    pub fn crop(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Self {
        assert!(
            row0 + rows <= self.rows && col0 + cols <= self.cols,
            "crop out of range"
        );
        let mut data = Vec::with_capacity(rows * cols);
        for r in row0..row0 + rows {
            let start = r * self.cols + col0;
            data.extend_from_slice(&self.data[start..start + cols]);
        }
        Self { rows, cols, data }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value.clone());
    }
}

impl<T> Grid<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    #[inline]
    pub fn cell_of(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    #[inline]
    pub fn get(&self, cell: Cell) -> &T {
        &self.data[cell.row * self.cols + cell.col]
    }

    #[inline]
    pub fn get_mut(&mut self, cell: Cell) -> &mut T {
        &mut self.data[cell.row * self.cols + cell.col]
    }

    #[inline]
    pub fn set(&mut self, cell: Cell, value: T) {
        self.data[cell.row * self.cols + cell.col] = value;
    }

    /// Bounds-checked conversion from signed coordinates.
    #[inline]
    pub fn checked(&self, row: isize, col: isize) -> Option<Cell> {
        if row < 0 || col < 0 || row as usize >= self.rows || col as usize >= self.cols {
            None
        } else {
            Some(Cell::new(row as usize, col as usize))
        }
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    /// 4-connected neighbors inside the grid, in the order up, down, left, right.
    pub fn neighbors4(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        const OFFSETS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
        OFFSETS
            .iter()
            .filter_map(move |&(dr, dc)| self.checked(cell.row as isize + dr, cell.col as isize + dc))
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl Grid<bool> {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = Cell> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| self.cell_of(i))
    }

    pub fn or_assign(&mut self, other: &BitGrid) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    pub fn not(&self) -> BitGrid {
        self.map(|b| !b)
    }

    /// Chebyshev dilation: every set cell grows into a `(2r+1)x(2r+1)` block.
    pub fn dilate_chebyshev(&self, radius: usize) -> BitGrid {
        if radius == 0 {
            return self.clone();
        }
        let (rows, cols) = (self.rows, self.cols);
        // separable max filter: rows first, then columns
        let mut horizontal = vec![false; rows * cols];
        for r in 0..rows {
            let row = &self.data[r * cols..(r + 1) * cols];
            let mut last_set: Option<usize> = None;
            let mut next_set = vec![usize::MAX; cols];
            let mut upcoming = usize::MAX;
            for c in (0..cols).rev() {
                if row[c] {
                    upcoming = c;
                }
                next_set[c] = upcoming;
            }
            for c in 0..cols {
                if row[c] {
                    last_set = Some(c);
                }
                let back = last_set.is_some_and(|l| c - l <= radius);
                let ahead = next_set[c] != usize::MAX && next_set[c] - c <= radius;
                horizontal[r * cols + c] = back || ahead;
            }
        }
        let mut out = vec![false; rows * cols];
        for c in 0..cols {
            let mut last_set: Option<usize> = None;
            let mut next_set = vec![usize::MAX; rows];
            let mut upcoming = usize::MAX;
            for r in (0..rows).rev() {
                if horizontal[r * cols + c] {
                    upcoming = r;
                }
                next_set[r] = upcoming;
            }
            for r in 0..rows {
                if horizontal[r * cols + c] {
                    last_set = Some(r);
                }
                let back = last_set.is_some_and(|l| r - l <= radius);
                let ahead = next_set[r] != usize::MAX && next_set[r] - r <= radius;
                out[r * cols + c] = back || ahead;
            }
        }
        Grid::from_vec(rows, cols, out)
    }

    /// Euclidean-disk dilation (cells whose centers lie within `radius` cells).
    pub fn dilate_disk(&self, radius: f64) -> BitGrid {
        let mut out = self.clone();
        let r = radius.floor() as isize;
        let r2 = radius * radius;
        let offsets: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dr| (-r..=r).map(move |dc| (dr, dc)))
            .filter(|&(dr, dc)| ((dr * dr + dc * dc) as f64) <= r2 + 1e-9)
            .collect();
        for cell in self.ones() {
            for &(dr, dc) in &offsets {
                if let Some(n) = self.checked(cell.row as isize + dr, cell.col as isize + dc) {
                    out.set(n, true);
                }
            }
        }
        out
    }

    /// Keeps only the largest 4-connected component of set cells. Ties go to the
    /// component whose first cell comes first in row-major order.
    pub fn largest_component(&self) -> BitGrid {
        let mut label = vec![u32::MAX; self.data.len()];
        let mut best: Option<(usize, u32)> = None;
        let mut next_label = 0u32;
        let mut queue = VecDeque::new();
        for start in 0..self.data.len() {
            if !self.data[start] || label[start] != u32::MAX {
                continue;
            }
            let id = next_label;
            next_label += 1;
            label[start] = id;
            queue.push_back(start);
            let mut size = 0usize;
            while let Some(i) = queue.pop_front() {
                size += 1;
                let cell = self.cell_of(i);
                for n in self.neighbors4(cell) {
                    let j = self.index(n);
                    if self.data[j] && label[j] == u32::MAX {
                        label[j] = id;
                        queue.push_back(j);
                    }
                }
            }
            if best.is_none_or(|(s, _)| size > s) {
                best = Some((size, id));
            }
        }
        let keep = best.map(|(_, id)| id);
        Grid::from_vec(self.rows, self.cols, label.iter().map(|&l| Some(l) == keep).collect())
    }

    /// Multi-source breadth-first hop distances over set cells. Unreached cells
    /// (and all sources outside the mask) stay `u32::MAX`.
    pub fn bfs_hops(&self, sources: &[Cell]) -> Grid<u32> {
        let mut dist = Grid::new(self.rows, self.cols, u32::MAX);
        let mut queue = VecDeque::new();
        for &s in sources {
            if self.contains(s) && *self.get(s) && *dist.get(s) == u32::MAX {
                dist.set(s, 0);
                queue.push_back(s);
            }
        }
        while let Some(c) = queue.pop_front() {
            let d = *dist.get(c);
            for n in self.neighbors4(c) {
                if *self.get(n) && *dist.get(n) == u32::MAX {
                    dist.set(n, d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }
}

/// Cells visited by a Bresenham line from `a` to `b`, inclusive of both ends.
pub fn bresenham(a: (isize, isize), b: (isize, isize), mut visit: impl FnMut(isize, isize)) {
    let (mut r, mut c) = a;
    let dr = (b.0 - a.0).abs();
    let dc = (b.1 - a.1).abs();
    let sr = if b.0 >= a.0 { 1 } else { -1 };
    let sc = if b.1 >= a.1 { 1 } else { -1 };
    let mut err = dc - dr;
    loop {
        visit(r, c);
        if r == b.0 && c == b.1 {
            break;
        }
        let e2 = 2 * err;
        if e2 > -dr {
            err -= dr;
            c += sc;
        }
        if e2 < dc {
            err += dc;
            r += sr;
        }
    }
}

/// Run-length encoding used for binary grids in scene files.
///
/// The JSON form is `{"rows": R, "cols": C, "runs": "z0,o0,z1,o1,..."}`: run
/// lengths of row-major cells, alternating and starting with a (possibly empty)
/// run of `false`.
pub mod rle {
    use super::BitGrid;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Encoded {
        rows: usize,
        cols: usize,
        runs: String,
    }

    pub fn encode_runs(grid: &BitGrid) -> String {
        let mut runs = Vec::new();
        let mut current = false;
        let mut length = 0usize;
        for &bit in grid.data() {
            if bit == current {
                length += 1;
            } else {
                runs.push(length);
                current = bit;
                length = 1;
            }
        }
        runs.push(length);
        runs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }

    pub fn decode_runs(rows: usize, cols: usize, runs: &str) -> Result<BitGrid, String> {
        let mut data = Vec::with_capacity(rows * cols);
        let mut value = false;
        for token in runs.split(',').filter(|t| !t.is_empty()) {
            let n: usize = token.trim().parse().map_err(|_| format!("bad run length {token:?}"))?;
            data.extend(std::iter::repeat_n(value, n));
            value = !value;
        }
        if data.len() != rows * cols {
            return Err(format!("runs cover {} cells, grid has {}", data.len(), rows * cols));
        }
        Ok(BitGrid::from_vec(rows, cols, data))
    }

    pub fn serialize<S: Serializer>(grid: &BitGrid, s: S) -> Result<S::Ok, S::Error> {
        Encoded {
            rows: grid.rows(),
            cols: grid.cols(),
            runs: encode_runs(grid),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BitGrid, D::Error> {
        let e = Encoded::deserialize(d)?;
        decode_runs(e.rows, e.cols, &e.runs).map_err(D::Error::custom)
    }
}
