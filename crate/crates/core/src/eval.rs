//! Staged success metrics over episode traces, batch aggregation and the
//! environment-side reward functions.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("malformed trace: {0}")]
    ChainViolation(String),
    #[error("no results to aggregate")]
    Empty,
    #[error("negative distance {0}")]
    NegativeDistance(f64),
}

/// Thresholds that decide each stage. `None` disables a check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricProfile {
    pub viewpoint_radius: f64,
    /// Minimum fraction of frame pixels on the goal; `None` means any pixel.
    pub pixel_fraction: Option<f64>,
    pub pick_radius: Option<f64>,
    /// Consecutive supported steps required after release.
    pub settle_steps: Option<u32>,
    /// Documented velocity thresholds; the quasi-static simulator enforces
    /// them through the settle counter.
    pub lin_vel_thresh: Option<f64>,
    pub ang_vel_thresh: Option<f64>,
    pub step_limit: u32,
}

impl MetricProfile {
    pub fn sim() -> Self {
        Self {
            viewpoint_radius: 0.1,
            pixel_fraction: Some(0.001),
            pick_radius: Some(0.8),
            settle_steps: Some(50),
            lin_vel_thresh: Some(5e-3),
            ang_vel_thresh: Some(5e-2),
            step_limit: 1250,
        }
    }

    pub fn real() -> Self {
        Self {
            viewpoint_radius: 1.0,
            pixel_fraction: None,
            pick_radius: None,
            settle_steps: None,
            lin_vel_thresh: None,
            ang_vel_thresh: None,
            step_limit: 300,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "sim" => Some(Self::sim()),
            "real" => Some(Self::real()),
            _ => None,
        }
    }

    fn enough_pixels(&self, pixels: u32, frame_pixels: u32) -> bool {
        match self.pixel_fraction {
            Some(f) => pixels as f64 >= f * frame_pixels as f64,
            None => pixels > 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraspRecord {
    pub success: bool,
    pub target_visible: bool,
    pub ee_distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReleaseRecord {
    pub receptacle_id: Option<String>,
    pub on_goal: bool,
}

/// One simulator step: the state observed before the action and what the
/// action did.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u32,
    /// World base pose when the observation was taken.
    pub pose: [f64; 3],
    /// Ground-truth pixel counts of target objects and goal receptacles.
    pub target_pixels: u32,
    pub goal_pixels: u32,
    pub action: String,
    pub collided: bool,
    pub invalid_action: Option<String>,
    pub grasp: Option<GraspRecord>,
    pub release: Option<ReleaseRecord>,
    /// A target object rests on a goal receptacle after the action.
    pub object_on_goal: bool,
    pub arm_collision: bool,
    pub phase: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub episode_id: String,
    pub frame_pixels: u32,
    pub records: Vec<TraceRecord>,
}

/// World positions used for scoring an episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricContext {
    pub target_viewpoints: Vec<[f64; 2]>,
    pub goal_viewpoints: Vec<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub find_obj: bool,
    pub pick: bool,
    pub find_rec: bool,
    pub place: bool,
    /// Step at which each stage completed.
    pub stage_steps: [Option<u32>; 4],
}

impl StageOutcome {
    pub fn flags(&self) -> [bool; 4] {
        [self.find_obj, self.pick, self.find_rec, self.place]
    }
}

fn near(pose: &[f64; 3], viewpoints: &[[f64; 2]], radius: f64) -> bool {
    viewpoints
        .iter()
        .any(|v| (v[0] - pose[0]).hypot(v[1] - pose[1]) <= radius)
}

fn first_find(
    trace: &Trace,
    records: &[TraceRecord],
    from: usize,
    viewpoints: &[[f64; 2]],
    pixels: impl Fn(&TraceRecord) -> u32,
    p: &MetricProfile,
) -> Option<usize> {
    (from..records.len()).find(|&t| {
        let r = &records[t];
        near(&r.pose, viewpoints, p.viewpoint_radius) && p.enough_pixels(pixels(r), trace.frame_pixels)
    })
}

fn capped<'a>(trace: &'a Trace, p: &MetricProfile) -> &'a [TraceRecord] {
    let n = trace.records.len().min(p.step_limit as usize);
    &trace.records[..n]
}

pub fn check_find_obj(trace: &Trace, ctx: &MetricContext, p: &MetricProfile) -> bool {
    evaluate(trace, ctx, p).find_obj
}

pub fn check_pick(trace: &Trace, ctx: &MetricContext, p: &MetricProfile) -> bool {
    evaluate(trace, ctx, p).pick
}

pub fn check_find_rec(trace: &Trace, ctx: &MetricContext, p: &MetricProfile) -> bool {
    evaluate(trace, ctx, p).find_rec
}

pub fn check_place(trace: &Trace, ctx: &MetricContext, p: &MetricProfile) -> bool {
    evaluate(trace, ctx, p).place
}

/// Scores the four stages in temporal order: each stage must complete at or
/// after the step where the previous one did. Records past the step limit are
/// ignored.
pub fn evaluate(trace: &Trace, ctx: &MetricContext, p: &MetricProfile) -> StageOutcome {
    let records = capped(trace, p);
    let mut out = StageOutcome::default();
    let Some(t1) = first_find(trace, records, 0, &ctx.target_viewpoints, |r| r.target_pixels, p) else {
        return out;
    };
    out.find_obj = true;
    out.stage_steps[0] = Some(records[t1].step);
    let Some(t2) = (t1..records.len()).find(|&t| {
        records[t]
            .grasp
            .is_some_and(|g| g.success && g.target_visible && p.pick_radius.is_none_or(|r| g.ee_distance <= r))
    }) else {
        return out;
    };
    out.pick = true;
    out.stage_steps[1] = Some(records[t2].step);
    let Some(t3) = first_find(trace, records, t2, &ctx.goal_viewpoints, |r| r.goal_pixels, p) else {
        return out;
    };
    out.find_rec = true;
    out.stage_steps[2] = Some(records[t3].step);
    let settle = p.settle_steps.unwrap_or(0) as usize;
    for t4 in t3..records.len() {
        let on_goal = records[t4].release.as_ref().is_some_and(|r| r.on_goal);
        if !on_goal {
            continue;
        }
        let clean = records[t3..=t4].iter().all(|r| !r.arm_collision);
        let window = &records[t4 + 1..];
        let settled = window.len() >= settle && window[..settle].iter().all(|r| r.object_on_goal);
        if clean && settled {
            out.place = true;
            out.stage_steps[3] = Some(records[t4].step);
        }
        // the first successful release onto the goal decides the stage
        break;
    }
    out
}

/// Fraction of stages completed; rejects outcomes that skip a stage.
pub fn partial_success(o: &StageOutcome) -> Result<f64, EvalError> {
    let f = o.flags();
    for k in 1..4 {
        if f[k] && !f[k - 1] {
            return Err(EvalError::ChainViolation(format!(
                "stage {} succeeded without stage {}",
                k + 1,
                k
            )));
        }
    }
    Ok(f.iter().filter(|b| **b).count() as f64 / 4.0)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub outcome: StageOutcome,
    pub overall: bool,
    pub partial: f64,
    pub total_steps: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub config_hash: String,
    /// Why the episode ended early (agent failure, protocol error).
    #[serde(default)]
    pub failure: Option<String>,
}

impl EpisodeResult {
    pub fn from_outcome(episode_id: &str, outcome: StageOutcome, total_steps: u32) -> Result<Self, EvalError> {
        Ok(Self {
            episode_id: episode_id.to_string(),
            partial: partial_success(&outcome)?,
            overall: outcome.place,
            outcome,
            total_steps,
            ..Default::default()
        })
    }

    /// An episode that produced no usable trace.
    pub fn failed(episode_id: &str, reason: &str) -> Self {
        Self {
            episode_id: episode_id.to_string(),
            failure: Some(reason.to_string()),
            ..Default::default()
        }
    }
}

/// Batch summary; rates are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub label: String,
    pub episodes: usize,
    pub find_obj: f64,
    pub pick: f64,
    pub find_rec: f64,
    pub overall: f64,
    pub partial: f64,
    /// Mean steps spent in each stage, over episodes that completed it.
    pub mean_stage_steps: [Option<f64>; 4],
    /// Fraction of episodes that reached (attempted) each stage.
    pub attempted: [f64; 4],
    pub mean_total_steps: f64,
}

pub fn aggregate(label: &str, results: &[EpisodeResult]) -> Result<SummaryTable, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = results.len() as f64;
    let rate = |k: usize| results.iter().filter(|r| r.outcome.flags()[k]).count() as f64 / n;
    let mut mean_stage_steps = [None; 4];
    for (k, slot) in mean_stage_steps.iter_mut().enumerate() {
        let durations: Vec<f64> = results
            .iter()
            .filter_map(|r| {
                let s = &r.outcome.stage_steps;
                let end = s[k]?;
                let start = if k == 0 { 0 } else { s[k - 1]? };
                Some(end as f64 - start as f64)
            })
            .collect();
        if !durations.is_empty() {
            *slot = Some(durations.iter().sum::<f64>() / durations.len() as f64);
        }
    }
    let attempted = [1.0, rate(0), rate(1), rate(2)];
    Ok(SummaryTable {
        label: label.to_string(),
        episodes: results.len(),
        find_obj: rate(0),
        pick: rate(1),
        find_rec: rate(2),
        overall: results.iter().filter(|r| r.overall).count() as f64 / n,
        partial: results.iter().map(|r| r.partial).sum::<f64>() / n,
        mean_stage_steps,
        attempted,
        mean_total_steps: results.iter().map(|r| r.total_steps as f64).sum::<f64>() / n,
    })
}

impl SummaryTable {
    pub fn header() -> String {
        format!(
            "{:<24} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10}",
            "config", "n", "FindObj", "Pick", "FindRec", "Overall", "Partial", "MeanSteps"
        )
    }

    /// Percentages to one decimal, aligned under [`SummaryTable::header`].
    pub fn row(&self) -> String {
        format!(
            "{:<24} {:>6} {:>8.1} {:>8.1} {:>8.1} {:>8.1} {:>8.1} {:>10.1}",
            self.label,
            self.episodes,
            100.0 * self.find_obj,
            100.0 * self.pick,
            100.0 * self.find_rec,
            100.0 * self.overall,
            100.0 * self.partial,
            self.mean_total_steps
        )
    }

    /// Per-stage step and attempt accounting.
    pub fn stage_rows(&self) -> String {
        let names = ["FindObj", "Pick", "FindRec", "Place"];
        let mut s = format!("{:<10} {:>12} {:>12}\n", "stage", "mean steps", "attempted %");
        for k in 0..4 {
            let steps = self.mean_stage_steps[k].map_or("-".to_string(), |v| format!("{v:.1}"));
            s.push_str(&format!(
                "{:<10} {:>12} {:>12.1}\n",
                names[k],
                steps,
                100.0 * self.attempted[k]
            ));
        }
        s
    }
}

impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", Self::header())?;
        write!(f, "{}", self.row())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FindRewardParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub d_close: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeRewardParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub success_bonus: f64,
    pub wrong_object_penalty: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceRewardParams {
    pub release_contact: f64,
    pub contact_per_step: f64,
    pub failed_release: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub find: FindRewardParams,
    pub gaze: GazeRewardParams,
    pub place: PlaceRewardParams,
    pub slack: f64,
    /// Subtract the collision term (default) instead of adding it.
    pub collision_is_penalty: bool,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            find: FindRewardParams {
                alpha: 1.0,
                beta: 1.0,
                gamma: 0.3,
                d_close: 3.0,
            },
            gaze: GazeRewardParams {
                alpha: 2.0,
                beta: 1.0,
                gamma: 0.8,
                success_bonus: 2.0,
                wrong_object_penalty: -0.5,
            },
            place: PlaceRewardParams {
                release_contact: 5.0,
                contact_per_step: 1.0,
                failed_release: -1.0,
            },
            slack: -0.005,
            collision_is_penalty: true,
        }
    }
}

/// Distance to the nearest goal, heading error and collision flag at a step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardState {
    pub d: f64,
    pub theta: f64,
    pub did_collide: bool,
}

pub fn reward_find_x(prev: &RewardState, cur: &RewardState, p: &RewardParams) -> Result<f64, EvalError> {
    for d in [prev.d, cur.d] {
        if d < 0.0 {
            return Err(EvalError::NegativeDistance(d));
        }
    }
    let f = &p.find;
    let mut r = f.alpha * (prev.d - cur.d);
    if cur.d <= f.d_close {
        r += f.beta * (prev.theta - cur.theta);
    }
    if cur.did_collide {
        r += if p.collision_is_penalty { -f.gamma } else { f.gamma };
    }
    Ok(r + p.slack)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GazeEvent {
    pub success: bool,
    /// A wrong object is centered and this is the first time for it.
    pub wrong_object: bool,
}

pub fn reward_gaze(prev: &RewardState, cur: &RewardState, p: &RewardParams, event: GazeEvent) -> f64 {
    let g = &p.gaze;
    let mut r = g.alpha * (prev.d - cur.d) + p.slack;
    if cur.d <= g.gamma {
        r += g.beta * cur.theta.cos();
    }
    if event.success {
        r += g.success_bonus;
    }
    if event.wrong_object {
        r += g.wrong_object_penalty;
    }
    r
}

/// Remembers which wrong objects were already penalized.
#[derive(Clone, Debug, Default)]
pub struct WrongObjectTracker {
    seen: BTreeSet<String>,
}

impl WrongObjectTracker {
    /// True the first time `object_id` is reported.
    pub fn fire(&mut self, object_id: &str) -> bool {
        self.seen.insert(object_id.to_string())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlaceEvents {
    /// `Some(contact)` on the step the object was released.
    pub released: Option<bool>,
    /// The object touches the goal receptacle after the step.
    pub in_contact: bool,
}

pub fn reward_place(e: &PlaceEvents, p: &RewardParams) -> f64 {
    let q = &p.place;
    let r = match e.released {
        Some(true) => q.release_contact,
        Some(false) => q.failed_release,
        None if e.in_contact => q.contact_per_step,
        None => 0.0,
    };
    r + p.slack
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_values() {
        let mut o = StageOutcome {
            find_obj: true,
            ..Default::default()
        };
        assert_eq!(partial_success(&o).unwrap(), 0.25);
        o.pick = true;
        o.find_rec = true;
        assert_eq!(partial_success(&o).unwrap(), 0.75);
        o.place = true;
        assert_eq!(partial_success(&o).unwrap(), 1.0);
        let bad = StageOutcome {
            pick: true,
            ..Default::default()
        };
        assert!(partial_success(&bad).is_err());
    }

    #[test]
    fn aggregate_rejects_empty_and_averages() {
        assert_eq!(aggregate("x", &[]), Err(EvalError::Empty));
        let a = EpisodeResult {
            partial: 0.25,
            ..Default::default()
        };
        let b = EpisodeResult {
            partial: 0.75,
            ..Default::default()
        };
        assert_eq!(aggregate("x", &[a, b]).unwrap().partial, 0.5);
    }

    #[test]
    fn slack_only_find_reward() {
        let s = RewardState {
            d: 2.0,
            theta: 0.4,
            did_collide: false,
        };
        assert!((reward_find_x(&s, &s, &RewardParams::default()).unwrap() + 0.005).abs() < 1e-12);
    }
}
