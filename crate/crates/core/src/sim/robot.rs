//! Kinematic robot model and the action spaces.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::geometry::{wrap_angle, Pose2};
use crate::scene::Scene;

pub const LIFT_LIMITS: (f64, f64) = (0.0, 1.1);
pub const EXTENSION_LIMITS: (f64, f64) = (0.0, 0.52);
pub const TILT_LIMITS: (f64, f64) = (-FRAC_PI_2, FRAC_PI_4);
pub const PAN_LIMITS: (f64, f64) = (-PI, PI);
pub const WRIST_LIMITS: (f64, f64) = (-PI, PI);
pub const GRIPPER_LIMITS: (f64, f64) = (0.0, 1.0);

/// Arm root offset from the base center along the arm axis.
pub const ARM_ROOT_OFFSET: f64 = 0.20;
/// End-effector height above the lift joint.
pub const EE_HEIGHT_OFFSET: f64 = 0.05;

/// Per-step magnitude bands `[min, max]` for nonzero joint deltas.
pub const BAND_BASE_FORWARD: (f64, f64) = (0.10, 0.25);
pub const BAND_BASE_TURN: (f64, f64) = (5.0 * PI / 180.0, 30.0 * PI / 180.0);
pub const BAND_ARM: (f64, f64) = (0.02, 0.10);
pub const BAND_ANGULAR: (f64, f64) = (0.02, 0.10);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joints {
    pub lift: f64,
    pub arm_extension: f64,
    pub head_pan: f64,
    pub head_tilt: f64,
    pub wrist_yaw: f64,
    pub wrist_pitch: f64,
    pub wrist_roll: f64,
    pub gripper: f64,
}

impl Default for Joints {
    fn default() -> Self {
        Self {
            lift: 0.75,
            arm_extension: 0.0,
            head_pan: 0.0,
            head_tilt: -0.45,
            wrist_yaw: 0.0,
            wrist_pitch: 0.0,
            wrist_roll: 0.0,
            gripper: 1.0,
        }
    }
}

impl Joints {
    pub fn to_array(&self) -> [f64; 8] {
        [
            self.lift,
            self.arm_extension,
            self.head_pan,
            self.head_tilt,
            self.wrist_yaw,
            self.wrist_pitch,
            self.wrist_roll,
            self.gripper,
        ]
    }

    pub fn clamp(&mut self) {
        self.lift = self.lift.clamp(LIFT_LIMITS.0, LIFT_LIMITS.1);
        self.arm_extension = self.arm_extension.clamp(EXTENSION_LIMITS.0, EXTENSION_LIMITS.1);
        self.head_pan = self.head_pan.clamp(PAN_LIMITS.0, PAN_LIMITS.1);
        self.head_tilt = self.head_tilt.clamp(TILT_LIMITS.0, TILT_LIMITS.1);
        self.wrist_yaw = self.wrist_yaw.clamp(WRIST_LIMITS.0, WRIST_LIMITS.1);
        self.wrist_pitch = self.wrist_pitch.clamp(WRIST_LIMITS.0, WRIST_LIMITS.1);
        self.wrist_roll = self.wrist_roll.clamp(WRIST_LIMITS.0, WRIST_LIMITS.1);
        self.gripper = self.gripper.clamp(GRIPPER_LIMITS.0, GRIPPER_LIMITS.1);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Navigation,
    Manipulation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub base: Pose2,
    pub joints: Joints,
    pub mode: Mode,
    pub held_object: Option<String>,
    pub step_count: u32,
}

impl RobotState {
    pub fn new(base: Pose2) -> Self {
        Self {
            base,
            joints: Joints::default(),
            mode: Mode::Navigation,
            held_object: None,
            step_count: 0,
        }
    }

    /// End-effector position: the arm extends to the robot's right.
    pub fn end_effector(&self) -> [f64; 3] {
        let (x, y) = self.base.transform(0.0, -(ARM_ROOT_OFFSET + self.joints.arm_extension));
        [x, y, self.joints.lift + EE_HEIGHT_OFFSET]
    }

    /// Arm root position at the lift height (start of the arm segment).
    pub fn arm_root(&self) -> [f64; 3] {
        let (x, y) = self.base.transform(0.0, -ARM_ROOT_OFFSET);
        [x, y, self.joints.lift + EE_HEIGHT_OFFSET]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteAction {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

/// Per-joint increments. Zero fields are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct JointDeltas {
    pub base_forward: f64,
    pub base_turn: f64,
    pub lift: f64,
    pub arm_extension: f64,
    pub head_pan: f64,
    pub head_tilt: f64,
    pub wrist_yaw: f64,
    pub wrist_pitch: f64,
    pub wrist_roll: f64,
    pub gripper: f64,
}

impl JointDeltas {
    pub fn is_zero(&self) -> bool {
        self.arm_deltas().iter().all(|(_, v)| *v == 0.0)
            && self.base_forward == 0.0
            && self.base_turn == 0.0
            && self.head_pan == 0.0
            && self.head_tilt == 0.0
            && self.gripper == 0.0
    }

    fn arm_deltas(&self) -> [(&'static str, f64); 5] {
        [
            ("lift", self.lift),
            ("arm_extension", self.arm_extension),
            ("wrist_yaw", self.wrist_yaw),
            ("wrist_pitch", self.wrist_pitch),
            ("wrist_roll", self.wrist_roll),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Discrete {
        action: DiscreteAction,
    },
    /// Relative target in the base frame: translate by `(dx, dy)`, then turn
    /// by `dyaw`.
    Waypoint {
        dx: f64,
        dy: f64,
        dyaw: f64,
    },
    JointDeltas {
        deltas: JointDeltas,
    },
    Grasp,
    Release,
    EnterManipulationMode,
    SetHeadTilt {
        tilt: f64,
    },
}

impl Action {
    pub fn stop() -> Self {
        Action::Discrete {
            action: DiscreteAction::Stop,
        }
    }

    pub fn noop() -> Self {
        Action::JointDeltas {
            deltas: JointDeltas::default(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Action::Discrete {
                action: DiscreteAction::Forward,
            } => "forward",
            Action::Discrete {
                action: DiscreteAction::TurnLeft,
            } => "turn_left",
            Action::Discrete {
                action: DiscreteAction::TurnRight,
            } => "turn_right",
            Action::Discrete {
                action: DiscreteAction::Stop,
            } => "stop",
            Action::Waypoint { .. } => "waypoint",
            Action::JointDeltas { .. } => "joint_deltas",
            Action::Grasp => "grasp",
            Action::Release => "release",
            Action::EnterManipulationMode => "enter_manipulation_mode",
            Action::SetHeadTilt { .. } => "set_head_tilt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionConfig {
    pub forward_step: f64,
    pub turn_step: f64,
    pub max_waypoint: f64,
    /// Sampling interval when sweeping a straight base motion.
    pub sweep_step: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            forward_step: 0.25,
            turn_step: 30f64.to_radians(),
            max_waypoint: 2.0,
            sweep_step: 0.01,
        }
    }
}

/// Result of a base motion.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    pub state: RobotState,
    pub collided: bool,
    pub stop: bool,
}

/// Moves the base along a straight segment to `(tx, ty)`, stopping at the last
/// navigable sample before the first blocked one.
pub fn sweep(scene: &Scene, from: Pose2, tx: f64, ty: f64, step: f64) -> (Pose2, bool) {
    let length = (tx - from.x).hypot(ty - from.y);
    if length == 0.0 {
        return (from, false);
    }
    let n = (length / step).ceil() as usize;
    let mut last = from;
    for i in 1..=n {
        let t = i as f64 / n as f64;
        let x = from.x + (tx - from.x) * t;
        let y = from.y + (ty - from.y) * t;
        if !scene.is_navigable(x, y) {
            return (last, true);
        }
        last = Pose2::new(x, y, from.yaw);
    }
    (Pose2::new(tx, ty, from.yaw), false)
}

pub fn apply_discrete(
    state: &RobotState,
    action: DiscreteAction,
    scene: &Scene,
    config: &MotionConfig,
) -> Result<Motion, SimError> {
    if state.mode != Mode::Navigation && action != DiscreteAction::Stop {
        return Err(SimError::InvalidAction("discrete moves require navigation mode".into()));
    }
    let mut next = state.clone();
    let mut collided = false;
    let mut stop = false;
    match action {
        DiscreteAction::Forward => {
            let (tx, ty) = state.base.transform(config.forward_step, 0.0);
            let (pose, hit) = sweep(scene, state.base, tx, ty, config.sweep_step);
            next.base = pose;
            collided = hit;
        }
        DiscreteAction::TurnLeft => next.base.yaw = wrap_angle(state.base.yaw + config.turn_step),
        DiscreteAction::TurnRight => next.base.yaw = wrap_angle(state.base.yaw - config.turn_step),
        DiscreteAction::Stop => stop = true,
    }
    Ok(Motion {
        state: next,
        collided,
        stop,
    })
}

pub fn apply_waypoint(
    state: &RobotState,
    dx: f64,
    dy: f64,
    dyaw: f64,
    scene: &Scene,
    config: &MotionConfig,
) -> Result<Motion, SimError> {
    if state.mode != Mode::Navigation {
        return Err(SimError::InvalidAction("waypoints require navigation mode".into()));
    }
    if !(dx.is_finite() && dy.is_finite() && dyaw.is_finite()) {
        return Err(SimError::InvalidAction("non-finite waypoint".into()));
    }
    let mut next = state.clone();
    // the translation is capped rather than rejected
    let length = dx.hypot(dy);
    let scale = if length > config.max_waypoint {
        config.max_waypoint / length
    } else {
        1.0
    };
    let (tx, ty) = state.base.transform(dx * scale, dy * scale);
    let (pose, collided) = sweep(scene, state.base, tx, ty, config.sweep_step);
    next.base = Pose2::new(pose.x, pose.y, wrap_angle(state.base.yaw + dyaw));
    Ok(Motion {
        state: next,
        collided,
        stop: false,
    })
}

fn check_band(name: &str, value: f64, band: (f64, f64)) -> Result<(), SimError> {
    const TOL: f64 = 1e-9;
    let m = value.abs();
    if !value.is_finite() {
        return Err(SimError::InvalidAction(format!("{name}: non-finite delta")));
    }
    if m == 0.0 {
        return Ok(());
    }
    if m > band.1 + TOL {
        return Err(SimError::BandViolation(format!(
            "{name}: delta {value} exceeds per-step band [{}, {}]",
            band.0, band.1
        )));
    }
    if m < band.0 - TOL {
        return Err(SimError::BandViolation(format!(
            "{name}: delta {value} below per-step band [{}, {}]",
            band.0, band.1
        )));
    }
    Ok(())
}

/// Applies joint increments. Base forward motion is swept against the nav
/// grid; in manipulation mode it is the lateral degree of freedom of the arm.
pub fn apply_joint_deltas(
    state: &RobotState,
    d: &JointDeltas,
    scene: &Scene,
    config: &MotionConfig,
) -> Result<Motion, SimError> {
    check_band("base_forward", d.base_forward, BAND_BASE_FORWARD)?;
    check_band("base_turn", d.base_turn, BAND_BASE_TURN)?;
    for (name, v) in d.arm_deltas() {
        check_band(
            name,
            v,
            if name.starts_with("wrist") {
                BAND_ANGULAR
            } else {
                BAND_ARM
            },
        )?;
    }
    check_band("head_pan", d.head_pan, BAND_ANGULAR)?;
    check_band("head_tilt", d.head_tilt, BAND_ANGULAR)?;
    check_band("gripper", d.gripper, BAND_ANGULAR)?;
    if state.mode == Mode::Navigation && d.arm_deltas().iter().any(|(_, v)| *v != 0.0) {
        return Err(SimError::InvalidAction("arm joints require manipulation mode".into()));
    }
    if state.mode == Mode::Manipulation && d.base_turn != 0.0 {
        return Err(SimError::InvalidAction(
            "base rotation is frozen in manipulation mode".into(),
        ));
    }
    let mut next = state.clone();
    let j = &mut next.joints;
    j.lift += d.lift;
    j.arm_extension += d.arm_extension;
    j.head_pan += d.head_pan;
    j.head_tilt += d.head_tilt;
    j.wrist_yaw += d.wrist_yaw;
    j.wrist_pitch += d.wrist_pitch;
    j.wrist_roll += d.wrist_roll;
    j.gripper += d.gripper;
    j.clamp();
    next.base.yaw = wrap_angle(next.base.yaw + d.base_turn);
    let mut collided = false;
    if d.base_forward != 0.0 {
        let (tx, ty) = next.base.transform(d.base_forward, 0.0);
        let (pose, hit) = sweep(scene, next.base, tx, ty, config.sweep_step);
        next.base = pose;
        collided = hit;
    }
    Ok(Motion {
        state: next,
        collided,
        stop: false,
    })
}

/// Switches to manipulation mode: the base turns 90 degrees left so the arm
/// faces the original heading, and the head looks along the arm.
pub fn enter_manipulation_mode(state: &RobotState) -> Result<RobotState, SimError> {
    if state.mode == Mode::Manipulation {
        return Err(SimError::InvalidAction("already in manipulation mode".into()));
    }
    let mut next = state.clone();
    next.mode = Mode::Manipulation;
    next.base.yaw = wrap_angle(state.base.yaw + FRAC_PI_2);
    next.joints.head_pan = -FRAC_PI_2;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::fixtures::trivial_fixture;

    fn open_state() -> (Scene, RobotState) {
        let (scene, ep) = trivial_fixture(0);
        let [x, y, yaw] = ep.robot_start;
        (scene, RobotState::new(Pose2::new(x, y, yaw)))
    }

    #[test]
    fn forward_moves_exactly_quarter_meter() {
        let (scene, mut s) = open_state();
        s.base.yaw = std::f64::consts::FRAC_PI_2;
        let m = apply_discrete(&s, DiscreteAction::Forward, &scene, &MotionConfig::default()).unwrap();
        assert!(!m.collided);
        assert!((m.state.base.distance_to(s.base.x, s.base.y) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn turns_are_inverse() {
        let (scene, s) = open_state();
        let c = MotionConfig::default();
        let a = apply_discrete(&s, DiscreteAction::TurnLeft, &scene, &c).unwrap().state;
        let b = apply_discrete(&a, DiscreteAction::TurnRight, &scene, &c).unwrap().state;
        assert!((wrap_angle(b.base.yaw - s.base.yaw)).abs() < 1e-12);
    }

    #[test]
    fn joint_bands() {
        let (scene, s) = open_state();
        let c = MotionConfig::default();
        let mut m = enter_manipulation_mode(&s).unwrap();
        m.joints.arm_extension = 0.10;
        let d = JointDeltas {
            arm_extension: 0.05,
            ..Default::default()
        };
        let r = apply_joint_deltas(&m, &d, &scene, &c).unwrap();
        assert!((r.state.joints.arm_extension - 0.15).abs() < 1e-12);
        let d = JointDeltas {
            arm_extension: 0.15,
            ..Default::default()
        };
        let err = apply_joint_deltas(&m, &d, &scene, &c).unwrap_err().to_string();
        assert!(err.contains("arm_extension") && err.contains("exceeds per-step band"));
        m.joints.lift = 1.05;
        let d = JointDeltas {
            lift: 0.10,
            ..Default::default()
        };
        assert_eq!(apply_joint_deltas(&m, &d, &scene, &c).unwrap().state.joints.lift, 1.1);
        let d = JointDeltas {
            lift: 0.01,
            ..Default::default()
        };
        assert!(apply_joint_deltas(&m, &d, &scene, &c).is_err());
    }

    #[test]
    fn arm_requires_manipulation_mode() {
        let (scene, s) = open_state();
        let d = JointDeltas {
            lift: 0.05,
            ..Default::default()
        };
        assert!(apply_joint_deltas(&s, &d, &scene, &MotionConfig::default()).is_err());
    }

    #[test]
    fn manipulation_mode_once() {
        let (_, mut s) = open_state();
        s.base.yaw = 0.0;
        let m = enter_manipulation_mode(&s).unwrap();
        assert!((m.base.yaw - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(m.mode, Mode::Manipulation);
        assert!(enter_manipulation_mode(&m).is_err());
        // the arm now points along the original heading
        let ee = m.end_effector();
        assert!(ee[0] > m.base.x + 0.19 && (ee[1] - m.base.y).abs() < 1e-9);
    }

    #[test]
    fn end_effector_at_joint_limits() {
        let mut s = RobotState::new(Pose2::new(1.0, 2.0, 0.0));
        s.joints.lift = LIFT_LIMITS.1;
        s.joints.arm_extension = EXTENSION_LIMITS.1;
        let ee = s.end_effector();
        assert!((ee[0] - 1.0).abs() < 1e-12);
        assert!((ee[1] - (2.0 - 0.72)).abs() < 1e-12);
        assert!((ee[2] - 1.15).abs() < 1e-12);
        s.joints.lift = 0.0;
        s.joints.arm_extension = 0.0;
        let ee = s.end_effector();
        assert!((ee[1] - 1.8).abs() < 1e-12 && (ee[2] - 0.05).abs() < 1e-12);
    }
}
