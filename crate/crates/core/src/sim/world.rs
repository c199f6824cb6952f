//! Simulator instance: world state, rendering with noise, and action
//! application including grasp and release.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{object_instance_id, render, CameraPose, Frame, WorldGeometry};
use super::robot::{
    apply_discrete, apply_joint_deltas, apply_waypoint, enter_manipulation_mode, Action, Mode, RobotState,
};
use super::{GoalSpec, NoiseProfile, Observation, SimConfig, SimError};
use crate::geometry::{wrap_angle, Pose2};
use crate::scene::{Episode, ObjectInstance, Scene, Support};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspOutcome {
    pub success: bool,
    pub object_id: Option<String>,
    /// Some target instance was visible in the frame the grasp was issued on.
    pub target_visible: bool,
    /// End-effector distance to the nearest visible target (infinite if none).
    pub ee_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReleaseOutcome {
    pub object_id: String,
    /// Receptacle the object settled on; `None` means it fell to the floor.
    pub receptacle_id: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// Base motion was truncated by an obstacle.
    pub collided: bool,
    pub stop: bool,
    pub invalid_action: Option<String>,
    pub grasp: Option<GraspOutcome>,
    pub release: Option<ReleaseOutcome>,
    /// The arm intersected scene geometry after this action.
    pub arm_collision: bool,
}

fn distance3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Snaps the nearest visible candidate within `radius` of the end-effector.
/// `visible` lists the instance ids present in the current frame; candidates
/// are `(object index, instance id)` pairs.
pub fn snap_grasp(
    state: &RobotState,
    objects: &[ObjectInstance],
    candidates: &[(usize, u16)],
    visible: &BTreeSet<u16>,
    radius: f64,
) -> Result<(RobotState, GraspOutcome), SimError> {
    if state.held_object.is_some() {
        return Err(SimError::InvalidAction("grasp while holding an object".into()));
    }
    let ee = state.end_effector();
    let mut best: Option<(f64, usize)> = None;
    for &(idx, id) in candidates {
        if !visible.contains(&id) || objects[idx].support == Support::Held {
            continue;
        }
        let d = distance3(&ee, &objects[idx].center());
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, idx));
        }
    }
    let mut next = state.clone();
    let outcome = match best {
        Some((d, idx)) if d <= radius => {
            next.held_object = Some(objects[idx].id.clone());
            GraspOutcome {
                success: true,
                object_id: Some(objects[idx].id.clone()),
                target_visible: true,
                ee_distance: d,
            }
        }
        Some((d, _)) => GraspOutcome {
            success: false,
            object_id: None,
            target_visible: true,
            ee_distance: d,
        },
        None => GraspOutcome {
            success: false,
            object_id: None,
            target_visible: false,
            ee_distance: f64::INFINITY,
        },
    };
    Ok((next, outcome))
}

/// Drops the held object below the end-effector. It settles on a receptacle
/// when the end-effector projects inside its surface and is at most
/// `drop_tolerance` above it; otherwise it lands on the floor.
pub fn release_object(
    state: &RobotState,
    scene: &Scene,
    objects: &mut [ObjectInstance],
    drop_tolerance: f64,
) -> Result<(RobotState, ReleaseOutcome), SimError> {
    let Some(held) = state.held_object.clone() else {
        return Err(SimError::InvalidAction("release with empty gripper".into()));
    };
    let obj = objects
        .iter_mut()
        .find(|o| o.id == held)
        .ok_or_else(|| SimError::InvalidAction(format!("held object {held} unknown")))?;
    let ee = state.end_effector();
    let support = scene.receptacles.iter().find(|r| {
        let drop = ee[2] - r.surface_height;
        r.surface.contains(ee[0], ee[1]) && drop > 0.0 && drop <= drop_tolerance
    });
    let receptacle_id = match support {
        Some(r) => {
            let s = r.surface.inset(obj.footprint_radius);
            let (x, y) = if s.width() >= 0.0 && s.height() >= 0.0 {
                (ee[0].clamp(s.x0, s.x1), ee[1].clamp(s.y0, s.y1))
            } else {
                r.surface.center()
            };
            obj.pose.x = x;
            obj.pose.y = y;
            obj.pose.z = r.surface_height;
            obj.support = Support::OnReceptacle(r.id.clone());
            Some(r.id.clone())
        }
        None => {
            obj.pose.x = ee[0];
            obj.pose.y = ee[1];
            obj.pose.z = 0.0;
            obj.support = Support::OnFloor;
            None
        }
    };
    let mut next = state.clone();
    next.held_object = None;
    Ok((
        next,
        ReleaseOutcome {
            object_id: held,
            receptacle_id,
        },
    ))
}

/// True when any sample along the arm lies inside scene geometry.
/// Whether the arm segment penetrates any box other than `ignore`.
pub fn arm_collides(state: &RobotState, geometry: &WorldGeometry, ignore: Option<u16>) -> bool {
    let a = state.arm_root();
    let b = state.end_effector();
    let n = ((distance3(&a, &b) / 0.02).ceil() as usize).max(1);
    (0..=n).any(|i| {
        let t = i as f64 / n as f64;
        let p = [
            a[0] + (b[0] - a[0]) * t,
            a[1] + (b[1] - a[1]) * t,
            a[2] + (b[2] - a[2]) * t,
        ];
        geometry
            .boxes()
            .iter()
            .filter(|bx| Some(bx.id) != ignore)
            .any(|bx| (0..3).all(|k| p[k] > bx.min[k] && p[k] < bx.max[k]))
    })
}

/// One simulation instance. Owns the mutable world state of an episode.
pub struct Sim {
    scene: Arc<Scene>,
    episode: Arc<Episode>,
    config: SimConfig,
    noise: NoiseProfile,
    noise_rng: ChaCha8Rng,
    state: RobotState,
    start: Pose2,
    objects: Vec<ObjectInstance>,
    geometry: WorldGeometry,
    /// Ground-truth category of every instance id.
    gt_labels: BTreeMap<u16, String>,
    target_ids: Vec<u16>,
    goal_ids: Vec<u16>,
    object_categories: Vec<String>,
    receptacle_categories: Vec<String>,
    last_frame: Option<Frame>,
    stopped: bool,
    /// Object just released from the gripper; it rests under the end
    /// effector and is not an arm obstacle until the robot moves again.
    released: Option<u16>,
}

impl Sim {
    pub fn new(
        scene: Arc<Scene>,
        episode: Arc<Episode>,
        config: SimConfig,
        noise: NoiseProfile,
        noise_seed: u64,
    ) -> Self {
        let [x, y, yaw] = episode.robot_start;
        let start = Pose2::new(x, y, yaw);
        let objects = episode.objects.clone();
        let geometry = WorldGeometry::build(&scene, &objects);
        let mut gt_labels = BTreeMap::new();
        for (i, r) in scene.receptacles.iter().enumerate() {
            gt_labels.insert((i + 1) as u16, r.category.clone());
        }
        for (j, o) in objects.iter().enumerate() {
            gt_labels.insert(object_instance_id(&scene, j), o.category.clone());
        }
        let target_ids = objects
            .iter()
            .enumerate()
            .filter(|(_, o)| episode.target_object_ids.contains(&o.id))
            .map(|(j, _)| object_instance_id(&scene, j))
            .collect();
        let goal_ids = scene
            .receptacles
            .iter()
            .enumerate()
            .filter(|(_, r)| r.category == episode.goal_receptacle_category)
            .map(|(i, _)| (i + 1) as u16)
            .collect();
        let object_categories: Vec<String> = objects
            .iter()
            .map(|o| o.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let receptacle_categories: Vec<String> = scene
            .receptacles
            .iter()
            .map(|r| r.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Self {
            scene,
            episode,
            config,
            noise,
            noise_rng: ChaCha8Rng::seed_from_u64(noise_seed),
            state: RobotState::new(start),
            start,
            objects,
            geometry,
            gt_labels,
            target_ids,
            goal_ids,
            object_categories,
            receptacle_categories,
            last_frame: None,
            stopped: false,
            released: None,
        }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn objects(&self) -> &[ObjectInstance] {
        &self.objects
    }

    pub fn stopped(&self) -> bool {
        self.stopped
    }

    pub fn target_instance_ids(&self) -> &[u16] {
        &self.target_ids
    }

    pub fn goal_instance_ids(&self) -> &[u16] {
        &self.goal_ids
    }

    /// Ground-truth frame of the latest observation.
    pub fn last_frame(&self) -> Option<&Frame> {
        self.last_frame.as_ref()
    }

    pub fn goal_spec(&self) -> GoalSpec {
        GoalSpec {
            object_category: self.episode.object_category.clone(),
            start_receptacle_category: self.episode.start_receptacle_category.clone(),
            goal_receptacle_category: self.episode.goal_receptacle_category.clone(),
        }
    }

    /// Index of a target object that sits on a goal-category receptacle.
    pub fn target_on_goal(&self) -> bool {
        self.objects.iter().any(|o| {
            self.episode.target_object_ids.contains(&o.id)
                && matches!(&o.support, Support::OnReceptacle(rid)
                    if self.scene.receptacle(rid).is_some_and(|r| r.category == self.episode.goal_receptacle_category))
        })
    }

    /// Renders the ground-truth frame at the current pose and derives the
    /// agent observation from it with perception noise applied.
    pub fn observe(&mut self) -> Observation {
        let pose = CameraPose::of_robot(&self.state, &self.config.camera);
        let frame = render(&self.geometry, &self.config.camera, &pose);
        let mut semantic = frame.semantic.clone();
        let mut labels = BTreeMap::new();
        let visible: BTreeSet<u16> = frame.semantic.iter().copied().filter(|&s| s != 0).collect();
        let mut dropped = BTreeSet::new();
        for id in visible {
            let gt = self.gt_labels.get(&id).cloned().unwrap_or_default();
            if self.noise.is_ground_truth() {
                labels.insert(id, gt);
                continue;
            }
            let u_drop: f64 = self.noise_rng.gen();
            let u_mis: f64 = self.noise_rng.gen();
            let u_pick: f64 = self.noise_rng.gen();
            if u_drop < self.noise.dropout_prob {
                dropped.insert(id);
                continue;
            }
            let label = if u_mis < self.noise.misclassify_prob {
                let pool = if (id as usize) <= self.scene.receptacles.len() {
                    &self.receptacle_categories
                } else {
                    &self.object_categories
                };
                let others: Vec<&String> = pool.iter().filter(|c| **c != gt).collect();
                if others.is_empty() {
                    gt
                } else {
                    let k = ((u_pick * others.len() as f64) as usize).min(others.len() - 1);
                    others[k].clone()
                }
            } else {
                gt
            };
            labels.insert(id, label);
        }
        if !dropped.is_empty() {
            for s in semantic.iter_mut() {
                if dropped.contains(s) {
                    *s = 0;
                }
            }
        }
        let (rx, ry) = self.start.inverse_transform(self.state.base.x, self.state.base.y);
        let obs = Observation {
            step: self.state.step_count,
            width: frame.width,
            height: frame.height,
            depth: frame.depth.clone(),
            semantic,
            labels,
            pose: [rx, ry, wrap_angle(self.state.base.yaw - self.start.yaw)],
            joints: self.state.joints,
            mode: self.state.mode,
            holding: self.state.held_object.is_some(),
            goal: self.goal_spec(),
        };
        self.last_frame = Some(frame);
        obs
    }

    /// Applies one action. Invalid actions consume the step and leave the
    /// world unchanged; the reason is reported in the outcome.
    pub fn step(&mut self, action: &Action) -> StepOutcome {
        let mut out = StepOutcome::default();
        let before = (self.state.base, self.state.joints);
        match self.apply(action, &mut out) {
            Ok(()) => {}
            Err(e) => out.invalid_action = Some(e.to_string()),
        }
        if let Some(r) = &out.release {
            self.released = self
                .objects
                .iter()
                .position(|o| o.id == r.object_id)
                .map(|j| object_instance_id(&self.scene, j));
        } else if before != (self.state.base, self.state.joints) {
            self.released = None;
        }
        if self.state.mode == Mode::Manipulation {
            out.arm_collision = arm_collides(&self.state, &self.geometry, self.released);
        }
        self.state.step_count += 1;
        out
    }

    fn apply(&mut self, action: &Action, out: &mut StepOutcome) -> Result<(), SimError> {
        let motion = &self.config.motion;
        match *action {
            Action::Discrete { action } => {
                let m = apply_discrete(&self.state, action, &self.scene, motion)?;
                self.state = m.state;
                out.collided = m.collided;
                out.stop = m.stop;
                self.stopped |= m.stop;
            }
            Action::Waypoint { dx, dy, dyaw } => {
                let m = apply_waypoint(&self.state, dx, dy, dyaw, &self.scene, motion)?;
                self.state = m.state;
                out.collided = m.collided;
            }
            Action::JointDeltas { deltas } => {
                let m = apply_joint_deltas(&self.state, &deltas, &self.scene, motion)?;
                self.state = m.state;
                out.collided = m.collided;
            }
            Action::SetHeadTilt { tilt } => {
                if !tilt.is_finite() {
                    return Err(SimError::InvalidAction("non-finite tilt".into()));
                }
                self.state.joints.head_tilt = tilt;
                self.state.joints.clamp();
            }
            Action::EnterManipulationMode => {
                self.state = enter_manipulation_mode(&self.state)?;
            }
            Action::Grasp => {
                let visible: BTreeSet<u16> = self
                    .last_frame
                    .as_ref()
                    .map(|f| f.semantic.iter().copied().filter(|&s| s != 0).collect())
                    .unwrap_or_default();
                let candidates: Vec<(usize, u16)> = self
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| self.episode.target_object_ids.contains(&o.id))
                    .map(|(j, _)| (j, object_instance_id(&self.scene, j)))
                    .collect();
                let (state, outcome) = snap_grasp(
                    &self.state,
                    &self.objects,
                    &candidates,
                    &visible,
                    self.config.grasp_radius,
                )?;
                if let Some(id) = &outcome.object_id {
                    let obj = self
                        .objects
                        .iter_mut()
                        .find(|o| &o.id == id)
                        .expect("grasped object exists");
                    obj.support = Support::Held;
                    self.geometry = WorldGeometry::build(&self.scene, &self.objects);
                }
                self.state = state;
                out.grasp = Some(outcome);
            }
            Action::Release => {
                let (state, outcome) =
                    release_object(&self.state, &self.scene, &mut self.objects, self.config.drop_tolerance)?;
                self.state = state;
                self.geometry = WorldGeometry::build(&self.scene, &self.objects);
                out.release = Some(outcome);
            }
        }
        Ok(())
    }
}
