//! Frontier exploration, fast-marching distance fields, goal selection and
//! per-step action extraction.

mod fmm;
mod frontier;
mod goal;
mod planner;

use thiserror::Error;

pub use fmm::{fmm_distance_field, fmm_distance_field_until, march, DistanceField};
pub use frontier::{frontier_cells, select_frontier_goal};
pub use goal::{project_goals, select_nav_goal, GoalRule, NavGoalDecision, NavView, TaskPhase};
pub use planner::{nav_stop_condition, plan_step, ActionSpace};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NavError {
    #[error("no goal cells")]
    NoGoals,
    #[error("all goals on obstacles")]
    AllGoalsBlocked,
    #[error("exploration exhausted")]
    ExplorationExhausted,
    #[error("goal unreachable")]
    GoalUnreachable,
}
