//! Skill sequencing, the built-in heuristic agent and the episode loop.

use std::f64::consts::TAU;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{
    evaluate, EpisodeResult, GraspRecord, MetricContext, MetricProfile, ReleaseRecord, Trace, TraceRecord,
};
use crate::geometry::wrap_angle;
use crate::grid::{BitGrid, Cell, CELL_SIZE};
use crate::manip::{
    estimate_placement_point, plan_release, score_grasps, GraspParams, GripperGeometry, ManipError, PlacementParams,
    PointCloud, ReleasePlan,
};
use crate::mapping::{MapConfig, SemanticMap};
use crate::nav::{
    fmm_distance_field_until, nav_stop_condition, plan_step, project_goals, select_nav_goal, ActionSpace, GoalRule,
    NavError, NavView, TaskPhase,
};
use crate::scene::{Episode, Scene};
use crate::sim::robot::{ARM_ROOT_OFFSET, BAND_ARM, EXTENSION_LIMITS, LIFT_LIMITS, TILT_LIMITS};
use crate::sim::{
    Action, CameraModel, DiscreteAction, GoalSpec, JointDeltas, Mode, NoiseProfile, Observation, Sim, SimConfig,
};

/// Horizontal reach of the arm from the base, less a small margin.
const REACH_LIMIT: f64 = ARM_ROOT_OFFSET + EXTENSION_LIMITS.1 - 0.02;
/// Half-width of the strip ahead of the arm used when the base cannot align.
const ARM_LINE_WIDTH: f64 = 0.02;
/// Joint moves stop once the remaining error falls below this.
const JOINT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("agent io: {0}")]
    Io(String),
}

/// Anything that maps observations to actions, one per step.
pub trait Agent {
    fn reset(&mut self, episode_id: &str, goal: &GoalSpec, seed: u64) -> Result<(), AgentError>;
    fn act(&mut self, obs: &Observation) -> Result<Action, AgentError>;
    /// Current skill, recorded in traces.
    fn phase_name(&self) -> &'static str {
        ""
    }
    /// Called once with the scored result of the episode.
    fn finish(&mut self, _result: &EpisodeResult) -> Result<(), AgentError> {
        Ok(())
    }
}

/// Emits stop on every step.
#[derive(Clone, Debug, Default)]
pub struct StopAgent;

impl Agent for StopAgent {
    fn reset(&mut self, _: &str, _: &GoalSpec, _: u64) -> Result<(), AgentError> {
        Ok(())
    }

    fn act(&mut self, _: &Observation) -> Result<Action, AgentError> {
        Ok(Action::stop())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillPhase {
    FindObject,
    Gaze,
    Grasp,
    FindReceptacle,
    Place,
    Done,
    Failed,
}

impl SkillPhase {
    pub fn name(&self) -> &'static str {
        match self {
            SkillPhase::FindObject => "find_object",
            SkillPhase::Gaze => "gaze",
            SkillPhase::Grasp => "grasp",
            SkillPhase::FindReceptacle => "find_receptacle",
            SkillPhase::Place => "place",
            SkillPhase::Done => "done",
            SkillPhase::Failed => "failed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeParams {
    /// Skip gazing and grasp straight away.
    pub enabled: bool,
    /// Approach until the target is at most this far (horizontal, m).
    pub approach_range: f64,
    /// Grasp only when the target is at most this far.
    pub grasp_range: f64,
    /// Frames without the target before falling back to search.
    pub lost_frames: u32,
    pub bearing_tolerance: f64,
    pub tilt_tolerance: f64,
    /// Grasp retries after the first attempt.
    pub grasp_retries: u32,
    pub max_steps: u32,
}

impl Default for GazeParams {
    fn default() -> Self {
        Self {
            enabled: true,
            approach_range: 0.6,
            grasp_range: 0.8,
            lost_frames: 20,
            bearing_tolerance: 0.03,
            tilt_tolerance: 0.03,
            grasp_retries: 3,
            max_steps: 60,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceParams {
    /// Stop approaching once the placement point is this close (m).
    pub approach_distance: f64,
    /// Lift target above the placement point (m).
    pub clearance: f64,
    pub placement: PlacementParams,
    /// Idle steps after release before stopping.
    pub settle_wait: u32,
    pub lost_frames: u32,
    pub max_approach_moves: u32,
}

impl Default for PlaceParams {
    fn default() -> Self {
        Self {
            approach_distance: 0.385,
            clearance: 0.05,
            placement: PlacementParams::default(),
            settle_wait: 50,
            lost_frames: 5,
            max_approach_moves: 6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub action_space: ActionSpace,
    pub map_size: usize,
    pub obstacle_band: (f64, f64),
    pub explored_range: f64,
    /// Obstacle dilation for planning, in cells.
    pub dilation_cells: usize,
    pub stop_radius: f64,
    /// Start-receptacle cells this close to the past trajectory are ignored.
    pub exclusion_radius: f64,
    /// Frontier cells this close to the past trajectory are ignored.
    pub frontier_exclusion_radius: f64,
    /// Distance-field computation stops this far beyond the robot's value.
    pub plan_margin: f64,
    /// In-place turns at the start of the episode.
    pub look_around_steps: usize,
    pub default_tilt: f64,
    pub gaze: GazeParams,
    pub gripper: GripperGeometry,
    pub grasp: GraspParams,
    pub place: PlaceParams,
    pub camera: CameraModel,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            action_space: ActionSpace::continuous(),
            map_size: 480,
            obstacle_band: (0.1, 1.5),
            explored_range: 5.0,
            dilation_cells: 6,
            stop_radius: 0.65,
            exclusion_radius: 1.0,
            frontier_exclusion_radius: 0.5,
            plan_margin: 1.0,
            look_around_steps: 6,
            default_tilt: -0.45,
            gaze: GazeParams::default(),
            gripper: GripperGeometry::default(),
            grasp: GraspParams::default(),
            place: PlaceParams::default(),
            camera: CameraModel::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PlaceStage {
    Approach,
    Lift,
    Extend,
    Release,
    Wait,
}

#[derive(Clone, Debug)]
struct PlaceState {
    stage: PlaceStage,
    lost: u32,
    moves: u32,
    aligns: u32,
    blocked: bool,
    plan: Option<ReleasePlan>,
    waited: u32,
}

impl Default for PlaceState {
    fn default() -> Self {
        Self {
            stage: PlaceStage::Approach,
            lost: 0,
            moves: 0,
            aligns: 0,
            blocked: false,
            plan: None,
            waited: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct GazeState {
    lost: u32,
    steps: u32,
    blocked: bool,
    attempts: u32,
    grasp_pending: bool,
}

/// Base translation issued last step, used to detect collisions.
#[derive(Clone, Copy, Debug)]
struct PendingMotion {
    from: [f64; 3],
    length: f64,
    heading: f64,
}

enum Step {
    Act(Action),
    Goto(SkillPhase),
}

/// Modular heuristic agent: semantic map, frontier exploration, distance
/// field navigation, heuristic gaze, grasp and place.
pub struct HeuristicAgent {
    config: AgentConfig,
    goal: GoalSpec,
    seed: u64,
    map: Option<SemanticMap>,
    phase: SkillPhase,
    entered_at_step: u32,
    look_around_left: usize,
    frontier_exclude: BitGrid,
    blocked: BitGrid,
    unreachable: BitGrid,
    pending_motion: Option<PendingMotion>,
    collided: bool,
    tilt_reset: bool,
    facing_steps: u32,
    last_step: u32,
    exclusions_cleared: bool,
    gaze: GazeState,
    place: PlaceState,
    failure: Option<String>,
}

impl HeuristicAgent {
    pub fn new(config: AgentConfig) -> Self {
        Self {
            config,
            goal: GoalSpec {
                object_category: String::new(),
                start_receptacle_category: String::new(),
                goal_receptacle_category: String::new(),
            },
            seed: 0,
            map: None,
            phase: SkillPhase::FindObject,
            entered_at_step: 0,
            look_around_left: 0,
            frontier_exclude: BitGrid::new(0, 0, false),
            blocked: BitGrid::new(0, 0, false),
            unreachable: BitGrid::new(0, 0, false),
            pending_motion: None,
            collided: false,
            tilt_reset: false,
            facing_steps: 0,
            last_step: 0,
            exclusions_cleared: false,
            gaze: GazeState::default(),
            place: PlaceState::default(),
            failure: None,
        }
    }

    pub fn phase(&self) -> SkillPhase {
        self.phase
    }

    /// Step at which the current phase was entered.
    pub fn entered_at_step(&self) -> u32 {
        self.entered_at_step
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    pub fn map(&self) -> Option<&SemanticMap> {
        self.map.as_ref()
    }

    fn map_ref(&self) -> &SemanticMap {
        self.map.as_ref().expect("agent reset before acting")
    }

    fn fail(&mut self, reason: impl Into<String>) -> Step {
        self.failure = Some(reason.into());
        Step::Goto(SkillPhase::Failed)
    }

    /// Notes a base translation so the next observation can reveal a collision.
    fn track(&mut self, action: &Action, obs: &Observation) {
        let yaw = obs.pose[2];
        self.pending_motion = match *action {
            Action::Waypoint { dx, dy, .. } if dx.hypot(dy) > 0.0 => Some(PendingMotion {
                from: obs.pose,
                length: dx.hypot(dy),
                heading: yaw + dy.atan2(dx),
            }),
            Action::Discrete {
                action: DiscreteAction::Forward,
            } => Some(PendingMotion {
                from: obs.pose,
                length: 0.25,
                heading: yaw,
            }),
            _ => None,
        };
    }

    fn detect_collision(&mut self, obs: &Observation) {
        self.collided = false;
        let Some(m) = self.pending_motion.take() else {
            return;
        };
        let moved = (obs.pose[0] - m.from[0]).hypot(obs.pose[1] - m.from[1]);
        if m.length > 0.02 && moved < m.length - 0.02 {
            self.collided = true;
            let (s, c) = m.heading.sin_cos();
            let map = self.map_ref();
            let mut cells = Vec::new();
            for k in 1..=2 {
                for lat in -1..=1 {
                    let d = k as f64 * CELL_SIZE;
                    let l = lat as f64 * CELL_SIZE;
                    let x = obs.pose[0] + c * d - s * l;
                    let y = obs.pose[1] + s * d + c * l;
                    if let Some(cell) = map.cell_of(x, y) {
                        cells.push(cell);
                    }
                }
            }
            let here = map.cell_of(obs.pose[0], obs.pose[1]);
            for cell in cells {
                if Some(cell) != here {
                    self.blocked.set(cell, true);
                }
            }
        }
    }

    fn stamp_visited(&mut self, cell: Cell) {
        let r = (self.config.frontier_exclusion_radius / CELL_SIZE).floor() as isize;
        for dr in -r..=r {
            for dc in -r..=r {
                if dr * dr + dc * dc <= r * r {
                    if let Some(c) = self
                        .frontier_exclude
                        .checked(cell.row as isize + dr, cell.col as isize + dc)
                    {
                        self.frontier_exclude.set(c, true);
                    }
                }
            }
        }
    }

    /// Window `(row0, col0, rows, cols)` covering everything observed so far.
    fn window(&self, robot: Cell) -> (usize, usize, usize, usize) {
        let map = self.map_ref();
        let n = map.size();
        let (mut r0, mut r1, mut c0, mut c1) = (robot.row, robot.row, robot.col, robot.col);
        let exp = map.explored().data();
        let obs = map.obstacles().data();
        for r in 0..n {
            let row_e = &exp[r * n..(r + 1) * n];
            let row_o = &obs[r * n..(r + 1) * n];
            let first = row_e.iter().zip(row_o).position(|(a, b)| *a || *b);
            if let Some(f) = first {
                let last = n - 1 - row_e.iter().zip(row_o).rev().position(|(a, b)| *a || *b).unwrap();
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(f);
                c1 = c1.max(last);
            }
        }
        let m = 12;
        let r0 = r0.saturating_sub(m);
        let c0 = c0.saturating_sub(m);
        let r1 = (r1 + m).min(n - 1);
        let c1 = (c1 + m).min(n - 1);
        (r0, c0, r1 - r0 + 1, c1 - c0 + 1)
    }

    fn nav_view(&self, robot: Cell) -> (NavView, (usize, usize)) {
        let map = self.map_ref();
        let win = self.window(robot);
        let (r0, c0, rows, cols) = win;
        let mut view = NavView::from_map(map, [0, 1, 2], self.config.dilation_cells, win);
        let crop = |g: &BitGrid| g.crop(r0, c0, rows, cols);
        let blocked = crop(&self.blocked);
        let raw = crop(map.obstacles());
        let unreachable = crop(&self.unreachable);
        let local = Cell::new(robot.row - r0, robot.col - c0);
        let rad = self.config.dilation_cells as isize;
        for (i, t) in view.traversable.data_mut().iter_mut().enumerate() {
            if blocked.data()[i] {
                *t = false;
            }
        }
        // the robot stands in free space even where the dilation says otherwise
        for dr in -rad..=rad {
            for dc in -rad..=rad {
                if dr * dr + dc * dc > rad * rad {
                    continue;
                }
                if let Some(c) = view
                    .traversable
                    .checked(local.row as isize + dr, local.col as isize + dc)
                {
                    let free = !*raw.get(c) && !*blocked.get(c);
                    view.traversable.set(c, free);
                }
            }
        }
        view.traversable.set(local, true);
        for ch in [&mut view.object, &mut view.start_receptacle, &mut view.goal_receptacle] {
            for (i, v) in ch.data_mut().iter_mut().enumerate() {
                if unreachable.data()[i] {
                    *v = false;
                }
            }
        }
        view.frontier_exclude = Some(crop(&self.frontier_exclude));
        (view, (r0, c0))
    }

    fn label_pixels(obs: &Observation, category: &str) -> usize {
        obs.semantic
            .iter()
            .filter(|&&s| s != 0 && obs.labels.get(&s).is_some_and(|l| l == category))
            .count()
    }

    fn turn(&self, angle: f64) -> Action {
        Action::Waypoint {
            dx: 0.0,
            dy: 0.0,
            dyaw: wrap_angle(angle),
        }
    }

    fn navigate(&mut self, obs: &Observation, task: TaskPhase) -> Step {
        if self.look_around_left > 0 {
            self.look_around_left -= 1;
            return Step::Act(match self.config.action_space {
                ActionSpace::Discrete { .. } => Action::Discrete {
                    action: DiscreteAction::TurnLeft,
                },
                ActionSpace::Continuous { .. } => self.turn(TAU / self.config.look_around_steps.max(1) as f64),
            });
        }
        if self.tilt_reset {
            self.tilt_reset = false;
            if (obs.joints.head_tilt - self.config.default_tilt).abs() > 1e-9 {
                return Step::Act(Action::SetHeadTilt {
                    tilt: self.config.default_tilt,
                });
            }
        }
        let (category, next) = match task {
            TaskPhase::FindObject => (self.goal.object_category.clone(), SkillPhase::Gaze),
            TaskPhase::FindReceptacle => (self.goal.goal_receptacle_category.clone(), SkillPhase::Place),
        };
        let visible = Self::label_pixels(obs, &category) > 0;
        let [x, y, yaw] = obs.pose;
        let robot = match self.map_ref().cell_of(x, y) {
            Some(c) => c,
            None => return self.fail("left the map"),
        };
        for _ in 0..4 {
            let (view, (r0, c0)) = self.nav_view(robot);
            let local = Cell::new(robot.row - r0, robot.col - c0);
            let decision = match select_nav_goal(&view, task, local, self.config.exclusion_radius) {
                Ok(d) => d,
                Err(NavError::ExplorationExhausted) if !self.exclusions_cleared => {
                    // forget exclusions once before giving up
                    self.exclusions_cleared = true;
                    self.frontier_exclude.fill(false);
                    self.unreachable.fill(false);
                    continue;
                }
                Err(e) => return self.fail(e.to_string()),
            };
            if nav_stop_condition(&decision, &view.frame, (x, y), visible, self.config.stop_radius) {
                self.facing_steps = 0;
                return Step::Goto(next);
            }
            let mark = |agent: &mut Self, cells: &[Cell], frontier: bool| {
                for c in cells {
                    let g = Cell::new(c.row + r0, c.col + c0);
                    if frontier {
                        agent.frontier_exclude.set(g, true);
                    } else {
                        agent.unreachable.set(g, true);
                    }
                }
            };
            let frontier = decision.rule == GoalRule::Frontier;
            if !frontier && !visible {
                // arrived but the goal is out of view: face it
                let nearest = decision.goal_cells.iter().min_by(|a, b| {
                    let (ax, ay) = view.frame.center(**a);
                    let (bx, by) = view.frame.center(**b);
                    (ax - x).hypot(ay - y).total_cmp(&(bx - x).hypot(by - y))
                });
                if let Some(c) = nearest {
                    let (cx, cy) = view.frame.center(*c);
                    if (cx - x).hypot(cy - y) <= self.config.stop_radius {
                        self.facing_steps += 1;
                        if self.facing_steps > 8 {
                            self.facing_steps = 0;
                            mark(self, &decision.goal_cells, false);
                            continue;
                        }
                        let bearing = wrap_angle((cy - y).atan2(cx - x) - yaw);
                        if bearing.abs() > 0.1 {
                            return Step::Act(self.turn(bearing));
                        }
                        return Step::Act(Action::noop());
                    }
                }
            }
            let goals = project_goals(&decision.goal_cells, &view.traversable, &view.explored);
            let field = if goals.is_empty() {
                Err(NavError::AllGoalsBlocked)
            } else {
                fmm_distance_field_until(&view.traversable, &goals, view.frame, local, self.config.plan_margin)
            };
            match field.and_then(|f| plan_step(&f, &view.traversable, obs.pose, &self.config.action_space)) {
                Ok(action) => return Step::Act(action),
                Err(_) => mark(self, &decision.goal_cells, frontier),
            }
        }
        Step::Act(self.turn(TAU / 12.0))
    }

    /// Instance id with the most pixels labeled `category` (lowest id on ties).
    fn dominant_instance(obs: &Observation, category: &str) -> Option<u16> {
        let mut counts = std::collections::BTreeMap::<u16, usize>::new();
        for &s in &obs.semantic {
            if s != 0 && obs.labels.get(&s).is_some_and(|l| l == category) {
                *counts.entry(s).or_default() += 1;
            }
        }
        counts
            .into_iter()
            .fold(None, |best: Option<(u16, usize)>, (id, n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((id, n)),
            })
            .map(|(id, _)| id)
    }

    fn gaze_step(&mut self, obs: &Observation) -> Step {
        let p = self.config.gaze;
        if !p.enabled {
            return Step::Goto(SkillPhase::Grasp);
        }
        let Some(id) = Self::dominant_instance(obs, &self.goal.object_category) else {
            self.gaze.lost += 1;
            if self.gaze.lost > p.lost_frames {
                self.gaze = GazeState::default();
                self.tilt_reset = true;
                return Step::Goto(SkillPhase::FindObject);
            }
            return Step::Act(Action::noop());
        };
        self.gaze.lost = 0;
        self.gaze.steps += 1;
        if self.gaze.steps > p.max_steps {
            return self.fail("gaze did not converge");
        }
        if self.collided {
            self.gaze.blocked = true;
        }
        let cloud = PointCloud::from_observation(obs, &self.config.camera, |s| s == id);
        let n = cloud.len() as f64;
        let mut centroid = [0.0; 3];
        for q in &cloud.points {
            for k in 0..3 {
                centroid[k] += q[k] / n;
            }
        }
        // aim at the real surface point nearest the centroid
        let aim = cloud
            .points
            .iter()
            .min_by(|a, b| dist3(a, &centroid).total_cmp(&dist3(b, &centroid)))
            .copied()
            .unwrap_or(centroid);
        let range = centroid[0].hypot(centroid[1]);
        let bearing = aim[1].atan2(aim[0]);
        if bearing.abs() > p.bearing_tolerance {
            return Step::Act(self.turn(bearing));
        }
        let tilt = (aim[2] - self.config.camera.mount_height)
            .atan2(aim[0].hypot(aim[1]))
            .clamp(TILT_LIMITS.0, TILT_LIMITS.1);
        if (tilt - obs.joints.head_tilt).abs() > p.tilt_tolerance {
            return Step::Act(Action::SetHeadTilt { tilt });
        }
        if range > p.approach_range && !self.gaze.blocked {
            let dx = (range - p.approach_range + 0.05).min(0.5);
            return Step::Act(Action::Waypoint { dx, dy: 0.0, dyaw: 0.0 });
        }
        if range > p.grasp_range {
            return self.fail("target out of reach");
        }
        let center = obs.semantic[(obs.height / 2) * obs.width + obs.width / 2];
        if center == id {
            Step::Goto(SkillPhase::Grasp)
        } else {
            // nudge toward the nearest target pixel
            let f = self.config.camera.focal();
            let (cx, _) = self.config.camera.principal_point();
            let mut best: Option<(f64, usize)> = None;
            for (i, &s) in obs.semantic.iter().enumerate() {
                if s == id {
                    let (u, v) = ((i % obs.width) as f64, (i / obs.width) as f64);
                    let d = (u - obs.width as f64 / 2.0).hypot(v - obs.height as f64 / 2.0);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, i));
                    }
                }
            }
            match best {
                Some((_, i)) => {
                    let u = (i % obs.width) as f64 + 0.5;
                    let yaw = -((u - cx) / f).atan();
                    let v = (i / obs.width) as f64 + 0.5;
                    let dt = -((v - self.config.camera.principal_point().1) / f).atan();
                    if yaw.abs() >= 1e-3 {
                        Step::Act(self.turn(yaw))
                    } else {
                        Step::Act(Action::SetHeadTilt {
                            tilt: (obs.joints.head_tilt + dt).clamp(TILT_LIMITS.0, TILT_LIMITS.1),
                        })
                    }
                }
                None => Step::Act(Action::noop()),
            }
        }
    }

    fn grasp_step(&mut self, obs: &Observation) -> Step {
        if self.gaze.grasp_pending {
            self.gaze.grasp_pending = false;
            if obs.holding {
                self.tilt_reset = true;
                return Step::Goto(SkillPhase::FindReceptacle);
            }
            return self.retry_grasp("grasp failed");
        }
        let id = Self::dominant_instance(obs, &self.goal.object_category);
        let cloud = match id {
            Some(id) => PointCloud::from_observation(obs, &self.config.camera, |s| s == id),
            None => PointCloud::default(),
        };
        match score_grasps(&cloud, &self.config.gripper, &self.config.grasp) {
            Ok(c) if !c.is_empty() => {
                self.gaze.grasp_pending = true;
                Step::Act(Action::Grasp)
            }
            _ => self.retry_grasp("no grasp candidates"),
        }
    }

    fn retry_grasp(&mut self, reason: &str) -> Step {
        self.gaze.attempts += 1;
        if self.gaze.attempts > self.config.gaze.grasp_retries {
            return self.fail(reason);
        }
        self.gaze.steps = 0;
        self.phase = SkillPhase::Gaze;
        self.entered_at_step = self.last_step;
        Step::Act(Action::noop())
    }

    fn place_step(&mut self, obs: &Observation) -> Step {
        let p = self.config.place;
        if self.collided {
            self.place.blocked = true;
        }
        match self.place.stage {
            PlaceStage::Approach => {
                let goal = self.goal.goal_receptacle_category.clone();
                let cloud = PointCloud::from_observation(obs, &self.config.camera, |s| {
                    obs.labels.get(&s).is_some_and(|l| *l == goal)
                });
                if cloud.is_empty() {
                    self.place.lost += 1;
                    if self.place.lost > p.lost_frames {
                        return self.fail(ManipError::PlaceTargetLost.to_string());
                    }
                    return Step::Act(Action::noop());
                }
                self.place.lost = 0;
                let cloud = top_surface(cloud, p.placement.height_tolerance);
                let seed = self.seed.wrapping_add(u64::from(self.place.moves + self.place.aligns));
                let mut point = match estimate_placement_point(&cloud, &p.placement, seed) {
                    Ok(q) => q,
                    Err(e) => return self.fail(e.to_string()),
                };
                let dist = point[0].hypot(point[1]);
                let bearing = point[1].atan2(point[0]);
                if dist > p.approach_distance + 0.01 && !self.place.blocked && self.place.moves < p.max_approach_moves {
                    self.place.moves += 1;
                    let d = (dist - p.approach_distance).min(1.0);
                    return Step::Act(Action::Waypoint {
                        dx: d * bearing.cos(),
                        dy: d * bearing.sin(),
                        dyaw: bearing,
                    });
                }
                if bearing.abs() > 0.03 && self.place.aligns < 3 {
                    self.place.aligns += 1;
                    return Step::Act(self.turn(bearing));
                }
                if point[0].hypot(point[1]) > REACH_LIMIT || bearing.abs() > 0.03 {
                    // Fall back to the part of the surface the arm sweeps from here.
                    let near = PointCloud::new(
                        cloud
                            .points
                            .iter()
                            .copied()
                            .filter(|q| q[1].abs() <= ARM_LINE_WIDTH && q[0] > ARM_ROOT_OFFSET && q[0] <= REACH_LIMIT)
                            .collect(),
                    );
                    if let Ok(q) = estimate_placement_point(&near, &p.placement, seed) {
                        point = q;
                    }
                }
                match plan_release(&point, p.clearance) {
                    Ok(plan) => {
                        self.place.plan = Some(plan);
                        self.place.stage = PlaceStage::Lift;
                        Step::Act(Action::EnterManipulationMode)
                    }
                    Err(e) => self.fail(e.to_string()),
                }
            }
            PlaceStage::Lift | PlaceStage::Extend => {
                if obs.mode != Mode::Manipulation {
                    return self.fail("manipulation mode unavailable");
                }
                let plan = self.place.plan.expect("plan set before lifting");
                let lifting = self.place.stage == PlaceStage::Lift;
                let (target, current, limits) = if lifting {
                    (plan.lift, obs.joints.lift, LIFT_LIMITS)
                } else {
                    (plan.extension, obs.joints.arm_extension, EXTENSION_LIMITS)
                };
                if let Some(d) = joint_step(target - current, current, limits) {
                    let deltas = if lifting {
                        JointDeltas {
                            lift: d,
                            ..Default::default()
                        }
                    } else {
                        JointDeltas {
                            arm_extension: d,
                            ..Default::default()
                        }
                    };
                    return Step::Act(Action::JointDeltas { deltas });
                }
                self.place.stage = if lifting {
                    PlaceStage::Extend
                } else {
                    PlaceStage::Release
                };
                self.place_step(obs)
            }
            PlaceStage::Release => {
                self.place.stage = PlaceStage::Wait;
                Step::Act(Action::Release)
            }
            PlaceStage::Wait => {
                if obs.holding {
                    return self.fail("release failed");
                }
                self.place.waited += 1;
                if self.place.waited <= p.settle_wait {
                    Step::Act(Action::noop())
                } else {
                    Step::Goto(SkillPhase::Done)
                }
            }
        }
    }
}

/// Next arm joint delta toward a remaining error of `r`, chosen so every
/// step stays inside the per-step band and the last one lands exactly. An
/// error below the band is closed by backing off first, unless that would
/// push the joint past `limits`.
fn joint_step(r: f64, current: f64, limits: (f64, f64)) -> Option<f64> {
    let (lo, hi) = BAND_ARM;
    let m = r.abs();
    if m < JOINT_TOLERANCE {
        return None;
    }
    if m < lo {
        let back = -lo.copysign(r);
        let next = current + back;
        return (next >= limits.0 && next <= limits.1).then_some(back);
    }
    let step = if m <= hi {
        m
    } else if m - hi >= lo {
        hi
    } else {
        m / 2.0
    };
    Some(step.copysign(r))
}

/// Keeps the points within `band` of the highest surface seen, dropping the
/// side faces that share the receptacle label.
fn top_surface(cloud: PointCloud, band: f64) -> PointCloud {
    let mut z: Vec<f64> = cloud.points.iter().map(|q| q[2]).collect();
    z.sort_by(f64::total_cmp);
    let top = z[(z.len() - 1) * 19 / 20];
    PointCloud::new(cloud.points.into_iter().filter(|q| q[2] >= top - band).collect())
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Agent for HeuristicAgent {
    fn reset(&mut self, _episode_id: &str, goal: &GoalSpec, seed: u64) -> Result<(), AgentError> {
        let c = &self.config;
        let mut mc = MapConfig::new(vec![
            goal.object_category.clone(),
            goal.start_receptacle_category.clone(),
            goal.goal_receptacle_category.clone(),
        ]);
        mc.size = c.map_size;
        mc.obstacle_band = c.obstacle_band;
        mc.explored_range = c.explored_range;
        let map = SemanticMap::new(mc).map_err(|e| AgentError::Protocol(e.to_string()))?;
        let n = map.size();
        *self = Self {
            goal: goal.clone(),
            seed,
            map: Some(map),
            look_around_left: self.config.look_around_steps,
            frontier_exclude: BitGrid::new(n, n, false),
            blocked: BitGrid::new(n, n, false),
            unreachable: BitGrid::new(n, n, false),
            ..Self::new(self.config)
        };
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<Action, AgentError> {
        if matches!(self.phase, SkillPhase::Done | SkillPhase::Failed) {
            return Ok(Action::stop());
        }
        self.last_step = obs.step;
        let camera = self.config.camera;
        if let Err(e) = self
            .map
            .as_mut()
            .expect("agent reset before acting")
            .update(obs, &camera)
        {
            self.failure = Some(e.to_string());
            self.phase = SkillPhase::Failed;
            return Ok(Action::stop());
        }
        self.detect_collision(obs);
        if let Some(cell) = self.map_ref().current_cell() {
            self.stamp_visited(cell);
        }
        for _ in 0..8 {
            let step = match self.phase {
                SkillPhase::FindObject => self.navigate(obs, TaskPhase::FindObject),
                SkillPhase::Gaze => self.gaze_step(obs),
                SkillPhase::Grasp => self.grasp_step(obs),
                SkillPhase::FindReceptacle => self.navigate(obs, TaskPhase::FindReceptacle),
                SkillPhase::Place => self.place_step(obs),
                SkillPhase::Done | SkillPhase::Failed => Step::Act(Action::stop()),
            };
            match step {
                Step::Act(action) => {
                    self.track(&action, obs);
                    return Ok(action);
                }
                Step::Goto(phase) => {
                    log::debug!("step {}: {} -> {}", obs.step, self.phase.name(), phase.name());
                    self.phase = phase;
                    self.entered_at_step = obs.step;
                }
            }
        }
        Ok(Action::noop())
    }

    fn phase_name(&self) -> &'static str {
        self.phase.name()
    }
}

/// Everything that parameterizes one episode run besides the agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSetup {
    pub sim: SimConfig,
    pub noise: NoiseProfile,
    pub profile: MetricProfile,
    /// Episode seed; perception noise and the agent derive their streams
    /// from it.
    pub seed: u64,
}

pub struct EpisodeRun {
    pub trace: Trace,
    pub result: EpisodeResult,
}

/// Seed handed to the agent for an episode seed.
pub fn agent_seed(seed: u64) -> u64 {
    seed.rotate_left(29) ^ 0xA076_1D64_78BD_642F
}

/// Runs the observe-act loop until stop, agent error or the step limit and
/// scores the trace.
pub fn run_episode(scene: Arc<Scene>, episode: Arc<Episode>, agent: &mut dyn Agent, setup: &RunSetup) -> EpisodeRun {
    let ctx = MetricContext {
        target_viewpoints: episode.target_viewpoints(),
        goal_viewpoints: episode.goal_viewpoints(&scene),
    };
    let mut sim = Sim::new(scene.clone(), episode.clone(), setup.sim, setup.noise, setup.seed);
    let cam = setup.sim.camera;
    let mut trace = Trace {
        episode_id: episode.id.clone(),
        frame_pixels: (cam.width * cam.height) as u32,
        records: Vec::new(),
    };
    let mut failure = None;
    if let Err(e) = agent.reset(&episode.id, &sim.goal_spec(), agent_seed(setup.seed)) {
        failure = Some(e.to_string());
    }
    let targets = sim.target_instance_ids().to_vec();
    let goals = sim.goal_instance_ids().to_vec();
    while failure.is_none() && trace.records.len() < setup.profile.step_limit as usize {
        let obs = sim.observe();
        let frame = sim.last_frame().expect("frame rendered by observe");
        let (target_pixels, goal_pixels) = (frame.count_ids(&targets) as u32, frame.count_ids(&goals) as u32);
        let base = sim.state().base;
        let action = match agent.act(&obs) {
            Ok(a) => a,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let phase = agent.phase_name().to_string();
        let out = sim.step(&action);
        let goal_category = &episode.goal_receptacle_category;
        trace.records.push(TraceRecord {
            step: obs.step,
            pose: [base.x, base.y, base.yaw],
            target_pixels,
            goal_pixels,
            action: action.kind().to_string(),
            collided: out.collided,
            invalid_action: out.invalid_action.clone(),
            grasp: out.grasp.as_ref().map(|g| GraspRecord {
                success: g.success,
                target_visible: g.target_visible,
                ee_distance: g.ee_distance,
            }),
            release: out.release.as_ref().map(|r| ReleaseRecord {
                receptacle_id: r.receptacle_id.clone(),
                on_goal: episode.target_object_ids.contains(&r.object_id)
                    && r.receptacle_id
                        .as_ref()
                        .and_then(|id| scene.receptacle(id))
                        .is_some_and(|rec| &rec.category == goal_category),
            }),
            object_on_goal: sim.target_on_goal(),
            arm_collision: out.arm_collision,
            phase,
        });
        if out.stop {
            break;
        }
    }
    let total = trace.records.len() as u32;
    let result = match failure {
        Some(reason) => EpisodeResult {
            total_steps: total,
            ..EpisodeResult::failed(&episode.id, &reason)
        },
        None => {
            let outcome = evaluate(&trace, &ctx, &setup.profile);
            EpisodeResult::from_outcome(&episode.id, outcome, total).expect("evaluation respects the stage chain")
        }
    };
    let result = EpisodeResult {
        seed: setup.seed,
        ..result
    };
    if let Err(e) = agent.finish(&result) {
        log::warn!("{}: agent finish failed: {e}", episode.id);
    }
    EpisodeRun { trace, result }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn walk(mut current: f64, target: f64, limits: (f64, f64)) -> (f64, usize) {
        let mut steps = 0;
        while let Some(d) = joint_step(target - current, current, limits) {
            assert!(
                d.abs() >= BAND_ARM.0 - 1e-12 && d.abs() <= BAND_ARM.1 + 1e-12,
                "step {d} outside the band"
            );
            current = (current + d).clamp(limits.0, limits.1);
            steps += 1;
            assert!(steps < 100);
        }
        (current, steps)
    }

    #[test]
    fn joint_steps_land_exactly_inside_the_band() {
        for &(from, to) in &[
            (0.0, 0.95),
            (0.3, 0.31),
            (0.5, 0.611),
            (0.2, 0.0),
            (0.0, 0.1),
            (0.9, 0.2),
        ] {
            let (end, _) = walk(from, to, LIFT_LIMITS);
            assert!((end - to).abs() < 1e-9, "{from} -> {to} ended at {end}");
        }
    }

    #[test]
    fn sub_band_error_at_a_limit_is_accepted() {
        assert_eq!(joint_step(0.01, 0.0, EXTENSION_LIMITS), None);
        assert_eq!(joint_step(0.01, 0.1, EXTENSION_LIMITS), Some(-0.02));
    }

    #[test]
    fn top_surface_drops_side_faces() {
        let mut pts: Vec<[f64; 3]> = (0..100).map(|i| [0.4 + 0.001 * i as f64, 0.0, 0.9]).collect();
        pts.extend((0..50).map(|i| [0.35, 0.0, 0.5 + 0.008 * i as f64]));
        let top = top_surface(PointCloud::new(pts), 0.03);
        assert_eq!(top.len(), 100 + 3);
        assert!(top.points.iter().all(|q| q[2] >= 0.87));
    }
}
