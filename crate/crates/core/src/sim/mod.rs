//! Kinematic simulator: robot model, sensing, perception noise, grasp/release
//! world mutation and the velocity controller.

pub mod camera;
pub mod controller;
pub mod robot;
mod world;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use camera::{CameraModel, CameraPose, Frame, WorldGeometry};
pub use controller::{velocity_controller_step, ControllerLimits};
pub use robot::{
    apply_discrete, apply_joint_deltas, apply_waypoint, enter_manipulation_mode, Action, DiscreteAction, JointDeltas,
    Joints, Mode, MotionConfig, RobotState,
};
pub use world::{release_object, snap_grasp, GraspOutcome, ReleaseOutcome, Sim, StepOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("{0}")]
    BandViolation(String),
}

/// Per-object, per-frame perception corruption.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    pub dropout_prob: f64,
    pub misclassify_prob: f64,
}

impl NoiseProfile {
    pub const GROUND_TRUTH: NoiseProfile = NoiseProfile {
        dropout_prob: 0.0,
        misclassify_prob: 0.0,
    };
    pub const NOISY: NoiseProfile = NoiseProfile {
        dropout_prob: 0.5,
        misclassify_prob: 0.2,
    };

    pub fn validate(&self) -> Result<(), String> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if ok(self.dropout_prob) && ok(self.misclassify_prob) {
            Ok(())
        } else {
            Err("noise probabilities must lie in [0, 1]".into())
        }
    }

    pub fn is_ground_truth(&self) -> bool {
        self.dropout_prob == 0.0 && self.misclassify_prob == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub object_category: String,
    pub start_receptacle_category: String,
    pub goal_receptacle_category: String,
}

/// What the agent sees each step. Depth is z-depth in meters (0 = no return);
/// `semantic` holds instance ids (0 = background) and `labels` the perceived
/// category of every id present in `semantic`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step: u32,
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub semantic: Vec<u16>,
    pub labels: BTreeMap<u16, String>,
    /// Base pose relative to the start pose: `[x, y, yaw]`.
    pub pose: [f64; 3],
    pub joints: Joints,
    pub mode: Mode,
    pub holding: bool,
    pub goal: GoalSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub camera: CameraModel,
    pub motion: MotionConfig,
    /// Largest end-effector height above a surface at which a released object
    /// settles on it.
    pub drop_tolerance: f64,
    /// Largest end-effector distance at which a grasp snaps the object.
    pub grasp_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::default(),
            motion: MotionConfig::default(),
            drop_tolerance: 0.15,
            grasp_radius: 0.8,
        }
    }
}
