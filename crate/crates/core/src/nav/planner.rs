use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::geometry::wrap_angle;
use crate::grid::{bresenham, BitGrid, Cell, GridFrame};
use crate::sim::{Action, DiscreteAction};

use super::fmm::DistanceField;
use super::goal::NavGoalDecision;
use super::NavError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete {
        forward_step: f64,
        turn_step: f64,
    },
    /// Waypoints along the steepest-descent chain, at most `lookahead` ahead.
    Continuous {
        lookahead: f64,
    },
}

impl ActionSpace {
    pub fn discrete() -> Self {
        ActionSpace::Discrete {
            forward_step: 0.25,
            turn_step: 30f64.to_radians(),
        }
    }

    pub fn continuous() -> Self {
        ActionSpace::Continuous { lookahead: 0.5 }
    }
}

fn robot_cell(field: &DistanceField, x: f64, y: f64) -> Result<Cell, NavError> {
    let (r, c) = field.frame.locate(x, y);
    let cell = field.values.checked(r, c).ok_or(NavError::GoalUnreachable)?;
    if field.at(cell).is_finite() {
        Ok(cell)
    } else {
        Err(NavError::GoalUnreachable)
    }
}

/// Field value after driving `length` along `heading`; infinite when the
/// segment leaves traversable space.
fn lookahead(
    field: &DistanceField,
    traversable: &BitGrid,
    start: Cell,
    (x, y): (f64, f64),
    heading: f64,
    length: f64,
) -> f64 {
    let frame = &field.frame;
    let n = (length / (0.5 * frame.h)).ceil().max(1.0) as usize;
    let mut last = f64::INFINITY;
    for i in 1..=n {
        let t = length * i as f64 / n as f64;
        let (r, c) = frame.locate(x + t * heading.cos(), y + t * heading.sin());
        let Some(cell) = traversable.checked(r, c) else {
            return f64::INFINITY;
        };
        if cell != start && !*traversable.get(cell) {
            return f64::INFINITY;
        }
        last = field.at(cell);
    }
    last
}

fn line_of_sight(traversable: &BitGrid, from: Cell, to: Cell) -> bool {
    let mut clear = true;
    bresenham(
        (from.row as isize, from.col as isize),
        (to.row as isize, to.col as isize),
        |r, c| {
            let cell = Cell::new(r as usize, c as usize);
            if cell != from && !*traversable.get(cell) {
                clear = false;
            }
        },
    );
    clear
}

/// One navigation action descending `field` from `pose = [x, y, yaw]`.
pub fn plan_step(
    field: &DistanceField,
    traversable: &BitGrid,
    pose: [f64; 3],
    space: &ActionSpace,
) -> Result<Action, NavError> {
    let [x, y, yaw] = pose;
    let start = robot_cell(field, x, y)?;
    let d0 = field.at(start);
    match *space {
        ActionSpace::Discrete {
            forward_step,
            turn_step,
        } => {
            let n = (TAU / turn_step).round().max(2.0) as usize;
            let scores: Vec<f64> = (0..n)
                .map(|k| {
                    lookahead(
                        field,
                        traversable,
                        start,
                        (x, y),
                        yaw + k as f64 * turn_step,
                        forward_step,
                    )
                })
                .collect();
            let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
            if best.is_infinite() {
                return Err(NavError::GoalUnreachable);
            }
            if scores[0] < d0 && scores[0] <= best {
                return Ok(Action::Discrete {
                    action: DiscreteAction::Forward,
                });
            }
            // smallest rotation reaching the best heading, left on ties
            let mut pick: Option<(usize, bool)> = None;
            for k in 1..n {
                if scores[k] > best {
                    continue;
                }
                let (rot, left) = if 2 * k <= n { (k, true) } else { (n - k, false) };
                if pick.is_none_or(|(pr, pl)| rot < pr || (rot == pr && left && !pl)) {
                    pick = Some((rot, left));
                }
            }
            let left = pick.is_none_or(|(_, l)| l);
            Ok(Action::Discrete {
                action: if left {
                    DiscreteAction::TurnLeft
                } else {
                    DiscreteAction::TurnRight
                },
            })
        }
        ActionSpace::Continuous { lookahead } => {
            const STEPS: [(isize, isize, f64); 8] = [
                (-1, 0, 1.0),
                (1, 0, 1.0),
                (0, -1, 1.0),
                (0, 1, 1.0),
                (-1, -1, std::f64::consts::SQRT_2),
                (-1, 1, std::f64::consts::SQRT_2),
                (1, -1, std::f64::consts::SQRT_2),
                (1, 1, std::f64::consts::SQRT_2),
            ];
            let h = field.frame.h;
            let mut chain = Vec::new();
            let mut cur = start;
            let mut length = 0.0;
            loop {
                let mut best: Option<(f64, Cell, f64)> = None;
                for (dr, dc, w) in STEPS {
                    let Some(n) = field.values.checked(cur.row as isize + dr, cur.col as isize + dc) else {
                        continue;
                    };
                    let v = field.at(n);
                    if *traversable.get(n) && v.is_finite() && best.is_none_or(|(bv, _, _)| v < bv) {
                        best = Some((v, n, w * h));
                    }
                }
                let Some((v, n, step)) = best else { break };
                if v >= field.at(cur) || length + step > lookahead + 1e-9 {
                    break;
                }
                length += step;
                chain.push(n);
                cur = n;
                if v == 0.0 {
                    break;
                }
            }
            let Some(&first) = chain.first() else {
                if d0 == 0.0 {
                    return Ok(Action::Waypoint {
                        dx: 0.0,
                        dy: 0.0,
                        dyaw: 0.0,
                    });
                }
                return Err(NavError::GoalUnreachable);
            };
            let target = chain
                .iter()
                .rev()
                .copied()
                .find(|c| line_of_sight(traversable, start, *c))
                .unwrap_or(first);
            let (tx, ty) = field.frame.center(target);
            let (wx, wy) = (tx - x, ty - y);
            let (s, c) = yaw.sin_cos();
            Ok(Action::Waypoint {
                dx: c * wx + s * wy,
                dy: -s * wx + c * wy,
                dyaw: wrap_angle(wy.atan2(wx) - yaw),
            })
        }
    }
}

/// True when a non-frontier goal cell lies within `stop_radius` of the robot
/// and the goal category is visible in the latest observation.
pub fn nav_stop_condition(
    decision: &NavGoalDecision,
    frame: &GridFrame,
    (x, y): (f64, f64),
    goal_visible: bool,
    stop_radius: f64,
) -> bool {
    if decision.is_frontier() || !goal_visible {
        return false;
    }
    decision.goal_cells.iter().any(|c| {
        let (cx, cy) = frame.center(*c);
        (cx - x).hypot(cy - y) <= stop_radius
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav::fmm::fmm_distance_field;
    use crate::nav::goal::GoalRule;
    use std::f64::consts::PI;

    fn frame() -> GridFrame {
        GridFrame {
            x0: 0.0,
            y0: 0.0,
            h: 0.05,
        }
    }

    fn open_field(goal: Cell) -> (DistanceField, BitGrid) {
        let free = BitGrid::new(60, 60, true);
        (fmm_distance_field(&free, &[goal], frame()).unwrap(), free)
    }

    #[test]
    fn goal_ahead_moves_forward() {
        let (f, free) = open_field(Cell::new(30, 55));
        let a = plan_step(&f, &free, [0.5, 1.525, 0.0], &ActionSpace::discrete()).unwrap();
        assert_eq!(
            a,
            Action::Discrete {
                action: DiscreteAction::Forward
            }
        );
    }

    #[test]
    fn goal_behind_turns() {
        let (f, free) = open_field(Cell::new(30, 2));
        let a = plan_step(&f, &free, [2.5, 1.525, 0.0], &ActionSpace::discrete()).unwrap();
        assert!(matches!(
            a,
            Action::Discrete {
                action: DiscreteAction::TurnLeft | DiscreteAction::TurnRight
            }
        ));
        let a = plan_step(&f, &free, [2.5, 1.525, PI], &ActionSpace::discrete()).unwrap();
        assert_eq!(
            a,
            Action::Discrete {
                action: DiscreteAction::Forward
            }
        );
    }

    #[test]
    fn continuous_waypoint_heads_down_the_gradient() {
        let (f, free) = open_field(Cell::new(30, 55));
        let Action::Waypoint { dx, dy, dyaw } =
            plan_step(&f, &free, [0.525, 1.525, 0.0], &ActionSpace::continuous()).unwrap()
        else {
            panic!("expected waypoint");
        };
        assert!(dx > 0.4 && dx <= 0.5 + 1e-9);
        assert!(dy.abs() < 0.05 && dyaw.abs() < 0.1);
    }

    #[test]
    fn unreachable_robot_cell_errors() {
        let mut free = BitGrid::new(10, 10, true);
        for r in 0..10 {
            free.set(Cell::new(r, 5), false);
        }
        let f = fmm_distance_field(&free, &[Cell::new(0, 0)], frame()).unwrap();
        assert_eq!(
            plan_step(&f, &free, [0.4, 0.2, 0.0], &ActionSpace::discrete()),
            Err(NavError::GoalUnreachable)
        );
    }

    #[test]
    fn stop_condition_rules() {
        let d = NavGoalDecision {
            rule: GoalRule::ObjectCooccurrence,
            goal_cells: vec![Cell::new(0, 0)],
        };
        let (cx, cy) = frame().center(Cell::new(0, 0));
        assert!(nav_stop_condition(&d, &frame(), (cx + 0.3, cy), true, 0.65));
        assert!(!nav_stop_condition(&d, &frame(), (cx + 0.3, cy), false, 0.65));
        let f = NavGoalDecision {
            rule: GoalRule::Frontier,
            ..d
        };
        assert!(!nav_stop_condition(&f, &frame(), (cx, cy), true, 0.65));
    }
}
