use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::grid::{BitGrid, Cell, GridFrame};
use crate::mapping::SemanticMap;

use super::frontier::select_frontier_goal;
use super::NavError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPhase {
    FindObject,
    FindReceptacle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalRule {
    ObjectCooccurrence,
    StartReceptacle,
    Frontier,
    GoalReceptacle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NavGoalDecision {
    pub rule: GoalRule,
    pub goal_cells: Vec<Cell>,
}

impl NavGoalDecision {
    pub fn is_frontier(&self) -> bool {
        self.rule == GoalRule::Frontier
    }
}

/// The map channels planning needs, cropped to a window of the map.
#[derive(Clone, Debug, PartialEq)]
pub struct NavView {
    pub frame: GridFrame,
    pub object: BitGrid,
    pub start_receptacle: BitGrid,
    pub goal_receptacle: BitGrid,
    pub explored: BitGrid,
    pub past_locations: BitGrid,
    /// Complement of the obstacle channel dilated by the robot footprint.
    pub traversable: BitGrid,
    /// Cells never picked as frontier goals.
    pub frontier_exclude: Option<BitGrid>,
}

impl NavView {
    /// `channels` are the object, start-receptacle and goal-receptacle
    /// channel indices; `window` is `(row0, col0, rows, cols)`.
    pub fn from_map(
        map: &SemanticMap,
        channels: [usize; 3],
        dilation_cells: usize,
        window: (usize, usize, usize, usize),
    ) -> Self {
        let (r0, c0, rows, cols) = window;
        let crop = |g: &BitGrid| g.crop(r0, c0, rows, cols);
        let obstacles = crop(map.obstacles());
        Self {
            frame: map.frame().offset(r0, c0),
            object: crop(map.category(channels[0])),
            start_receptacle: crop(map.category(channels[1])),
            goal_receptacle: crop(map.category(channels[2])),
            explored: crop(map.explored()),
            past_locations: crop(map.past_locations()),
            traversable: obstacles.dilate_chebyshev(dilation_cells).not(),
            frontier_exclude: None,
        }
    }
}

fn cells_where(a: &BitGrid, pred: impl Fn(Cell) -> bool) -> Vec<Cell> {
    a.ones().filter(|c| pred(*c)).collect()
}

/// Applies the goal-selection rules for the phase.
pub fn select_nav_goal(
    view: &NavView,
    phase: TaskPhase,
    robot: Cell,
    exclusion_radius: f64,
) -> Result<NavGoalDecision, NavError> {
    match phase {
        TaskPhase::FindObject => {
            let both = cells_where(&view.object, |c| *view.start_receptacle.get(c));
            if !both.is_empty() {
                return Ok(NavGoalDecision {
                    rule: GoalRule::ObjectCooccurrence,
                    goal_cells: both,
                });
            }
            let past: Vec<Cell> = view.past_locations.ones().collect();
            let r2 = (exclusion_radius / view.frame.h).powi(2);
            let remaining = cells_where(&view.start_receptacle, |c| {
                !past.iter().any(|p| {
                    let dr = p.row as f64 - c.row as f64;
                    let dc = p.col as f64 - c.col as f64;
                    dr * dr + dc * dc <= r2
                })
            });
            if !remaining.is_empty() {
                return Ok(NavGoalDecision {
                    rule: GoalRule::StartReceptacle,
                    goal_cells: remaining,
                });
            }
        }
        TaskPhase::FindReceptacle => {
            let cells: Vec<Cell> = view.goal_receptacle.ones().collect();
            if !cells.is_empty() {
                return Ok(NavGoalDecision {
                    rule: GoalRule::GoalReceptacle,
                    goal_cells: cells,
                });
            }
        }
    }
    let (cell, _) = select_frontier_goal(
        &view.explored,
        &view.traversable,
        robot,
        view.frame,
        view.frontier_exclude.as_ref(),
    )?;
    Ok(NavGoalDecision {
        rule: GoalRule::Frontier,
        goal_cells: vec![cell],
    })
}

/// Replaces goal cells that are not traversable with the nearest explored
/// traversable cells (first BFS layer that reaches any). Traversable goals are
/// kept. Returns an empty list when nothing is reachable.
pub fn project_goals(goals: &[Cell], traversable: &BitGrid, explored: &BitGrid) -> Vec<Cell> {
    let ok = |c: Cell| *traversable.get(c) && *explored.get(c);
    let mut out: Vec<Cell> = goals.iter().copied().filter(|c| ok(*c)).collect();
    let blocked: Vec<Cell> = goals.iter().copied().filter(|c| !ok(*c)).collect();
    if !blocked.is_empty() {
        let mut seen = BitGrid::new(traversable.rows(), traversable.cols(), false);
        let mut layer: VecDeque<Cell> = VecDeque::new();
        for c in blocked {
            if !*seen.get(c) {
                seen.set(c, true);
                layer.push_back(c);
            }
        }
        let mut found = Vec::new();
        while !layer.is_empty() && found.is_empty() {
            let mut next = VecDeque::new();
            for c in layer {
                for n in traversable.neighbors4(c) {
                    if *seen.get(n) {
                        continue;
                    }
                    seen.set(n, true);
                    if ok(n) {
                        found.push(n);
                    } else {
                        next.push_back(n);
                    }
                }
            }
            layer = next;
        }
        out.extend(found);
    }
    out.sort();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(n: usize) -> NavView {
        let empty = BitGrid::new(n, n, false);
        NavView {
            frame: GridFrame {
                x0: 0.0,
                y0: 0.0,
                h: 0.05,
            },
            object: empty.clone(),
            start_receptacle: empty.clone(),
            goal_receptacle: empty.clone(),
            explored: empty.clone(),
            past_locations: empty,
            traversable: BitGrid::new(n, n, true),
            frontier_exclude: None,
        }
    }

    #[test]
    fn cooccurrence_fires_first() {
        let mut v = view(20);
        v.object.set(Cell::new(5, 5), true);
        v.start_receptacle.set(Cell::new(5, 5), true);
        v.start_receptacle.set(Cell::new(5, 6), true);
        let d = select_nav_goal(&v, TaskPhase::FindObject, Cell::new(0, 0), 1.0).unwrap();
        assert_eq!(d.rule, GoalRule::ObjectCooccurrence);
        assert_eq!(d.goal_cells, vec![Cell::new(5, 5)]);
    }

    #[test]
    fn receptacle_near_trace_falls_through_to_frontier() {
        let mut v = view(60);
        v.start_receptacle.set(Cell::new(10, 20), true);
        v.past_locations.set(Cell::new(10, 5), true); // 15 cells = 0.75 m away
        for r in 0..60 {
            for c in 0..30 {
                v.explored.set(Cell::new(r, c), true);
            }
        }
        let d = select_nav_goal(&v, TaskPhase::FindObject, Cell::new(10, 5), 1.0).unwrap();
        assert_eq!(d.rule, GoalRule::Frontier);
        v.past_locations = BitGrid::new(60, 60, false);
        v.past_locations.set(Cell::new(50, 5), true);
        let d = select_nav_goal(&v, TaskPhase::FindObject, Cell::new(10, 5), 1.0).unwrap();
        assert_eq!(d.rule, GoalRule::StartReceptacle);
    }

    #[test]
    fn no_goal_and_no_frontier_is_exhausted() {
        let v = view(10);
        assert_eq!(
            select_nav_goal(&v, TaskPhase::FindReceptacle, Cell::new(0, 0), 1.0),
            Err(NavError::ExplorationExhausted)
        );
    }

    #[test]
    fn projection_moves_blocked_goals_to_nearest_free_cells() {
        let mut free = BitGrid::new(9, 9, true);
        for r in 3..6 {
            for c in 3..6 {
                free.set(Cell::new(r, c), false);
            }
        }
        let explored = BitGrid::new(9, 9, true);
        let out = project_goals(&[Cell::new(4, 3)], &free, &explored);
        assert_eq!(out, vec![Cell::new(4, 2)]);
    }
}
