//! Goto-pose velocity controller with a trapezoidal speed profile.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Pose2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerLimits {
    pub v_max: f64,
    pub w_max: f64,
    pub acc_lin: f64,
    pub acc_ang: f64,
    /// Heading error above which the robot turns in place.
    pub heading_threshold: f64,
    pub position_tolerance: f64,
    pub yaw_tolerance: f64,
}

impl Default for ControllerLimits {
    fn default() -> Self {
        Self {
            v_max: 0.3,
            w_max: 0.8,
            acc_lin: 0.3,
            acc_ang: 1.0,
            heading_threshold: 0.3,
            position_tolerance: 0.02,
            yaw_tolerance: 0.02,
        }
    }
}

/// Speed along a trapezoidal profile: accelerate from `current`, cruise at
/// `max`, and never exceed the speed from which the robot can still stop
/// within `remaining` (nor overshoot it within one step).
fn profile(remaining: f64, current: f64, max: f64, acc: f64, dt: f64) -> f64 {
    max.min((2.0 * acc * remaining).sqrt())
        .min(current.abs() + acc * dt)
        .min(remaining / dt)
        .max(0.0)
}

/// Returns `(v, w)` commands. `current` is the `(v, w)` applied on the
/// previous step.
pub fn velocity_controller_step(
    pose: &Pose2,
    goal: &Pose2,
    current: (f64, f64),
    limits: &ControllerLimits,
    dt: f64,
) -> (f64, f64) {
    assert!(dt > 0.0, "dt must be positive");
    let (dx, dy) = (goal.x - pose.x, goal.y - pose.y);
    let distance = dx.hypot(dy);
    let turn = |err: f64| -> f64 { err.signum() * profile(err.abs(), current.1, limits.w_max, limits.acc_ang, dt) };
    if distance <= limits.position_tolerance {
        let err = wrap_angle(goal.yaw - pose.yaw);
        if err.abs() <= limits.yaw_tolerance {
            return (0.0, 0.0);
        }
        return (0.0, turn(err));
    }
    let heading_err = wrap_angle(dy.atan2(dx) - pose.yaw);
    if heading_err.abs() > limits.heading_threshold {
        return (0.0, turn(heading_err));
    }
    let v = profile(distance, current.0, limits.v_max, limits.acc_lin, dt);
    (v, turn(heading_err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn terminal_condition() {
        let p = Pose2::new(1.0, 1.0, 0.5);
        assert_eq!(
            velocity_controller_step(&p, &p, (0.0, 0.0), &ControllerLimits::default(), 0.1),
            (0.0, 0.0)
        );
    }

    #[test]
    fn rotates_first_when_goal_is_to_the_left() {
        let l = ControllerLimits::default();
        let (v, w) = velocity_controller_step(
            &Pose2::new(0.0, 0.0, 0.0),
            &Pose2::new(0.0, 5.0, FRAC_PI_2),
            (0.0, 0.0),
            &l,
            0.1,
        );
        assert_eq!(v, 0.0);
        assert!(w > 0.0 && w <= l.w_max);
    }

    #[test]
    fn straight_rollout_stops_without_overshoot() {
        let l = ControllerLimits {
            v_max: 0.3,
            acc_lin: 0.3,
            ..Default::default()
        };
        let dt = 0.05;
        let goal = Pose2::new(2.0, 0.0, 0.0);
        let mut p = Pose2::new(0.0, 0.0, 0.0);
        let mut cmd = (0.0, 0.0);
        let mut max_x: f64 = 0.0;
        for _ in 0..2000 {
            cmd = velocity_controller_step(&p, &goal, cmd, &l, dt);
            if cmd == (0.0, 0.0) {
                break;
            }
            p.x += cmd.0 * p.yaw.cos() * dt;
            p.y += cmd.0 * p.yaw.sin() * dt;
            p.yaw += cmd.1 * dt;
            max_x = max_x.max(p.x);
            assert!(cmd.0 <= l.v_max + 1e-12);
        }
        assert_eq!(cmd, (0.0, 0.0));
        assert!((p.x - 2.0).abs() <= l.position_tolerance);
        assert!(max_x <= 2.0 + 1e-9);
    }
}
