//! C ABI over the ovmm simulator, heuristic agent and distance-field planner.
//!
//! Every function returns an [`OvmmStatus`]; on failure a message is
//! available from [`ovmm_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use ovmm::agent::{run_episode, Agent, AgentConfig, HeuristicAgent, RunSetup};
use ovmm::eval::MetricProfile;
use ovmm::grid::{BitGrid, Cell, GridFrame};
use ovmm::nav::fmm_distance_field;
use ovmm::scene::fixtures::{trivial_fixture, TRIVIAL_SUITE_LEN};
use ovmm::scene::{Episode, Scene};
use ovmm::sim::{Action, NoiseProfile, Observation, Sim, SimConfig};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OvmmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    BufferTooSmall = 4,
    NoObservation = 5,
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (OvmmStatus, String)>) -> OvmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OvmmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            OvmmStatus::Internal
        }
    }
}

fn null(what: &str) -> (OvmmStatus, String) {
    (OvmmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (OvmmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (OvmmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ovmm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Number of hand-authored fixture episodes.
#[no_mangle]
pub extern "C" fn ovmm_fixture_count() -> usize {
    TRIVIAL_SUITE_LEN
}

/// Simulator instance for one episode.
pub struct OvmmSim {
    sim: Sim,
    last: Option<Observation>,
}

/// Per-step result flags.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct OvmmStepInfo {
    pub collided: bool,
    pub invalid_action: bool,
    pub stop: bool,
    pub holding: bool,
    pub target_on_goal: bool,
    pub arm_collision: bool,
}

/// Stage outcome of a complete episode.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct OvmmEpisodeSummary {
    pub find_obj: bool,
    pub pick: bool,
    pub find_rec: bool,
    pub place: bool,
    pub partial: f64,
    pub total_steps: u32,
}

fn noise(noisy: bool) -> NoiseProfile {
    if noisy {
        NoiseProfile::NOISY
    } else {
        NoiseProfile::GROUND_TRUTH
    }
}

fn fixture(index: usize) -> Result<(Scene, Episode), (OvmmStatus, String)> {
    if index >= TRIVIAL_SUITE_LEN {
        return Err((
            OvmmStatus::InvalidArgument,
            format!("fixture index {index} out of range"),
        ));
    }
    Ok(trivial_fixture(index))
}

unsafe fn store(out: *mut *mut OvmmSim, scene: Scene, episode: Episode, seed: u64, noisy: bool) {
    let sim = Sim::new(
        Arc::new(scene),
        Arc::new(episode),
        SimConfig::default(),
        noise(noisy),
        seed,
    );
    *out = Box::into_raw(Box::new(OvmmSim { sim, last: None }));
}

/// Creates a simulator for fixture `index`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn ovmm_sim_new_fixture(
    index: usize,
    seed: u64,
    noisy: bool,
    out: *mut *mut OvmmSim,
) -> OvmmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (scene, episode) = fixture(index)?;
        store(out, scene, episode, seed, noisy);
        Ok(())
    })
}

/// Creates a simulator from scene and episode JSON documents.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ovmm_sim_new_json(
    scene_json: *const c_char,
    episode_json: *const c_char,
    seed: u64,
    noisy: bool,
    out: *mut *mut OvmmSim,
) -> OvmmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let scene =
            Scene::from_json(c_str(scene_json, "scene_json")?).map_err(|e| (OvmmStatus::Parse, e.to_string()))?;
        let episode =
            Episode::from_json(c_str(episode_json, "episode_json")?).map_err(|e| (OvmmStatus::Parse, e.to_string()))?;
        if episode.scene_id != scene.id {
            return Err((OvmmStatus::InvalidArgument, "episode belongs to another scene".into()));
        }
        store(out, scene, episode, seed, noisy);
        Ok(())
    })
}

/// Releases a simulator. Null is ignored.
///
/// # Safety
/// `sim` must come from an `ovmm_sim_new_*` call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ovmm_sim_free(sim: *mut OvmmSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Camera image dimensions.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ovmm_sim_image_size(sim: *const OvmmSim, width: *mut usize, height: *mut usize) -> OvmmStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        if width.is_null() || height.is_null() {
            return Err(null("width/height"));
        }
        let cam = s.sim.config().camera;
        *width = cam.width;
        *height = cam.height;
        Ok(())
    })
}

/// Renders the current observation into caller buffers of `pixels` entries
/// each (row-major) and writes the base pose `[x, y, yaw]` relative to the
/// start. Any buffer may be null to skip it.
///
/// # Safety
/// Non-null buffers must hold `pixels` elements (`pose`: 3).
#[no_mangle]
pub unsafe extern "C" fn ovmm_sim_observe(
    sim: *mut OvmmSim,
    depth: *mut f32,
    semantic: *mut u16,
    pixels: usize,
    pose: *mut f64,
) -> OvmmStatus {
    guard(|| {
        let s = sim.as_mut().ok_or_else(|| null("sim"))?;
        let obs = s.sim.observe();
        let n = obs.depth.len();
        if (!depth.is_null() || !semantic.is_null()) && pixels < n {
            return Err((OvmmStatus::BufferTooSmall, format!("need {n} pixels, got {pixels}")));
        }
        if !depth.is_null() {
            ptr::copy_nonoverlapping(obs.depth.as_ptr(), depth, n);
        }
        if !semantic.is_null() {
            ptr::copy_nonoverlapping(obs.semantic.as_ptr(), semantic, n);
        }
        if !pose.is_null() {
            ptr::copy_nonoverlapping(obs.pose.as_ptr(), pose, 3);
        }
        s.last = Some(obs);
        Ok(())
    })
}

/// Category perceived for `instance` in the last observation, copied as a
/// NUL-terminated string into `buf`. Writes an empty string when the id is
/// absent.
///
/// # Safety
/// `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ovmm_sim_label(
    sim: *const OvmmSim,
    instance: u16,
    buf: *mut c_char,
    len: usize,
) -> OvmmStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| null("sim"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let obs = s
            .last
            .as_ref()
            .ok_or((OvmmStatus::NoObservation, "observe first".to_string()))?;
        let label = obs.labels.get(&instance).map(String::as_str).unwrap_or("");
        if label.len() + 1 > len {
            return Err((OvmmStatus::BufferTooSmall, format!("need {} bytes", label.len() + 1)));
        }
        ptr::copy_nonoverlapping(label.as_ptr() as *const c_char, buf, label.len());
        *buf.add(label.len()) = 0;
        Ok(())
    })
}

/// Applies one action given as JSON (e.g. `{"type":"grasp"}`). Invalid
/// actions still consume a step and set `invalid_action`.
///
/// # Safety
/// `action_json` must be NUL-terminated; `info` may be null.
#[no_mangle]
pub unsafe extern "C" fn ovmm_sim_step_json(
    sim: *mut OvmmSim,
    action_json: *const c_char,
    info: *mut OvmmStepInfo,
) -> OvmmStatus {
    guard(|| {
        let s = sim.as_mut().ok_or_else(|| null("sim"))?;
        let action: Action =
            serde_json::from_str(c_str(action_json, "action_json")?).map_err(|e| (OvmmStatus::Parse, e.to_string()))?;
        let out = s.sim.step(&action);
        if let Some(i) = info.as_mut() {
            *i = OvmmStepInfo {
                collided: out.collided,
                invalid_action: out.invalid_action.is_some(),
                stop: out.stop,
                holding: s.sim.state().held_object.is_some(),
                target_on_goal: s.sim.target_on_goal(),
                arm_collision: out.arm_collision,
            };
        }
        Ok(())
    })
}

/// Runs the builtin heuristic agent on fixture `index` to completion.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ovmm_run_fixture(
    index: usize,
    seed: u64,
    noisy: bool,
    out: *mut OvmmEpisodeSummary,
) -> OvmmStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (scene, episode) = fixture(index)?;
        let setup = RunSetup {
            sim: SimConfig::default(),
            noise: noise(noisy),
            profile: MetricProfile::sim(),
            seed,
        };
        let mut agent = HeuristicAgent::new(AgentConfig::default());
        let run = run_episode(Arc::new(scene), Arc::new(episode), &mut agent as &mut dyn Agent, &setup);
        let o = run.result.outcome;
        *out = OvmmEpisodeSummary {
            find_obj: o.find_obj,
            pick: o.pick,
            find_rec: o.find_rec,
            place: o.place,
            partial: run.result.partial,
            total_steps: run.result.total_steps,
        };
        Ok(())
    })
}

/// Geodesic distance field on a `rows × cols` grid (nonzero = traversable)
/// from one goal cell, with cell size `h`. Unreachable cells get +infinity.
///
/// # Safety
/// `traversable` and `out` must hold `rows * cols` elements.
#[no_mangle]
pub unsafe extern "C" fn ovmm_fmm_distance(
    traversable: *const u8,
    rows: usize,
    cols: usize,
    goal_row: usize,
    goal_col: usize,
    h: f64,
    out: *mut f64,
) -> OvmmStatus {
    guard(|| {
        if traversable.is_null() || out.is_null() {
            return Err(null("traversable/out"));
        }
        let n = rows.checked_mul(cols).filter(|&n| n > 0);
        let n = n.ok_or((OvmmStatus::InvalidArgument, "grid must be non-empty".to_string()))?;
        if !(h > 0.0 && h.is_finite()) || goal_row >= rows || goal_col >= cols {
            return Err((OvmmStatus::InvalidArgument, "bad cell size or goal".into()));
        }
        let src = std::slice::from_raw_parts(traversable, n);
        let grid = BitGrid::from_vec(rows, cols, src.iter().map(|&v| v != 0).collect());
        let frame = GridFrame { x0: 0.0, y0: 0.0, h };
        let field = fmm_distance_field(&grid, &[Cell::new(goal_row, goal_col)], frame)
            .map_err(|e| (OvmmStatus::InvalidArgument, e.to_string()))?;
        ptr::copy_nonoverlapping(field.values.data().as_ptr(), out, n);
        Ok(())
    })
}
