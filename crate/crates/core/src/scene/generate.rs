//! Procedural apartment generation: recursive room splits, walls with door
//! gaps, box receptacles, and the navigable grid.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::RECEPTACLE_CATEGORIES;
use super::{Category, CategoryKind, Receptacle, Room, Scene, SceneError, WallSegment, MIN_SURFACE_AREA};
use crate::geometry::Rect;
use crate::grid::{BitGrid, Cell, CELL_SIZE};

const WALL_THICKNESS: f64 = 0.1;
const DOOR_WIDTH: f64 = 1.0;
const MIN_ROOM_SIDE: f64 = 2.0;
const SURFACE_INSET: f64 = 0.02;
const RECEPTACLE_CLEARANCE: f64 = 0.7;
const DOOR_CLEARANCE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneGenParams {
    /// Number of rooms, 1 to 5.
    pub rooms: usize,
    /// Apartment extent in meters (at most 20 x 20).
    pub width: f64,
    pub height: f64,
    /// Receptacles per square meter of apartment floor, used when
    /// `receptacle_count` is unset.
    pub receptacle_density: f64,
    pub receptacle_count: Option<usize>,
    pub robot_radius: f64,
    /// Whole-scene retries before giving up.
    pub max_attempts: usize,
    /// Rejection-sampling tries per receptacle.
    pub placement_attempts: usize,
}

impl Default for SceneGenParams {
    fn default() -> Self {
        Self {
            rooms: 3,
            width: 10.0,
            height: 8.0,
            receptacle_density: 0.12,
            receptacle_count: None,
            robot_radius: 0.25,
            max_attempts: 20,
            placement_attempts: 200,
        }
    }
}

impl SceneGenParams {
    fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidParams(m.to_string()));
        if !(1..=5).contains(&self.rooms) {
            return bad("room count must be in 1..=5");
        }
        if !(self.width > 0.0 && self.height > 0.0 && self.width <= 20.0 && self.height <= 20.0) {
            return bad("apartment bounds must be positive and at most 20 x 20 m");
        }
        if !(self.receptacle_density >= 0.0) {
            return bad("receptacle density must be nonnegative");
        }
        if !(self.robot_radius >= 0.0) {
            return bad("robot radius must be nonnegative");
        }
        if self.max_attempts == 0 || self.placement_attempts == 0 {
            return bad("attempt bounds must be positive");
        }
        Ok(())
    }

    fn total_receptacles(&self) -> usize {
        self.receptacle_count
            .unwrap_or_else(|| ((self.receptacle_density * self.width * self.height).round() as usize).max(self.rooms))
    }
}

#[derive(Clone, Copy, Debug)]
struct Door {
    /// True for doors in a vertical wall (x = const).
    vertical: bool,
    line: f64,
    center: f64,
}

impl Door {
    fn point(&self) -> (f64, f64) {
        if self.vertical {
            (self.line, self.center)
        } else {
            (self.center, self.line)
        }
    }
}

fn snap(v: f64) -> f64 {
    (v / CELL_SIZE).round() * CELL_SIZE
}

fn round_cm(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Generates a scene. Identical `(seed, params)` always yield the same scene.
pub fn generate_scene(seed: u64, params: &SceneGenParams) -> Result<Scene, SceneError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_failure = String::new();
    for _ in 0..params.max_attempts {
        match try_generate(&mut rng, seed, params) {
            Ok(scene) => return Ok(scene),
            Err(Attempt::Retry(reason)) => last_failure = reason,
            Err(Attempt::Fatal(e)) => return Err(e),
        }
    }
    Err(SceneError::Unsatisfiable(format!(
        "gave up after {} attempts: {last_failure}",
        params.max_attempts
    )))
}

enum Attempt {
    Retry(String),
    Fatal(SceneError),
}

fn try_generate(rng: &mut ChaCha8Rng, seed: u64, params: &SceneGenParams) -> Result<Scene, Attempt> {
    let bounds = Rect::new(0.0, 0.0, snap(params.width), snap(params.height));
    let (rects, doors, mut walls) = split_rooms(rng, bounds, params.rooms)?;
    walls.extend(outer_walls(&bounds));
    let rooms: Vec<Room> = rects
        .iter()
        .enumerate()
        .map(|(i, r)| Room {
            id: format!("room_{i}"),
            rect: *r,
        })
        .collect();

    let total = params.total_receptacles();
    let per_room = distribute(total, &rects);
    let mut receptacles: Vec<Receptacle> = Vec::with_capacity(total);
    for (room, &count) in rooms.iter().zip(&per_room) {
        let room_doors: Vec<Door> = doors
            .iter()
            .copied()
            .filter(|d| room.rect.expand(0.1).contains(d.point().0, d.point().1))
            .collect();
        for _ in 0..count {
            let rec =
                place_receptacle(rng, room, &room_doors, &receptacles, params.placement_attempts).ok_or_else(|| {
                    Attempt::Retry(format!(
                        "could not place receptacle {} in {}",
                        receptacles.len(),
                        room.id
                    ))
                })?;
            receptacles.push(Receptacle {
                id: format!("rec_{}", receptacles.len()),
                ..rec
            });
        }
    }

    let occupancy = rasterize_occupancy(&bounds, &walls, &receptacles);
    let mut scene = Scene {
        id: format!("scene_{seed:016x}"),
        seed,
        bounds,
        rooms,
        wall_segments: walls,
        receptacles,
        robot_radius: params.robot_radius,
        nav_grid: BitGrid::new(occupancy.rows(), occupancy.cols(), false),
        occupancy_grid: occupancy,
        catalog: RECEPTACLE_CATEGORIES
            .iter()
            .map(|n| Category {
                name: n.to_string(),
                kind: CategoryKind::Receptacle,
                split: None,
            })
            .collect(),
    };
    scene.nav_grid = match build_nav_grid(&scene, params.robot_radius) {
        Ok(g) => g,
        Err(SceneError::NoNavigableCell) => return Err(Attempt::Retry("no navigable cell".into())),
        Err(e) => return Err(Attempt::Fatal(e)),
    };
    for room in &scene.rooms {
        let has_nav = scene.nav_grid.ones().any(|c| {
            room.rect
                .contains(crate::geometry::cell_center(c).0, crate::geometry::cell_center(c).1)
        });
        if !has_nav {
            return Err(Attempt::Retry(format!("{} is not reachable", room.id)));
        }
    }
    Ok(scene)
}

fn outer_walls(b: &Rect) -> Vec<WallSegment> {
    let t = WALL_THICKNESS;
    vec![
        WallSegment {
            a: [b.x0, b.y0],
            b: [b.x1, b.y0],
            thickness: t,
        },
        WallSegment {
            a: [b.x0, b.y1],
            b: [b.x1, b.y1],
            thickness: t,
        },
        WallSegment {
            a: [b.x0, b.y0],
            b: [b.x0, b.y1],
            thickness: t,
        },
        WallSegment {
            a: [b.x1, b.y0],
            b: [b.x1, b.y1],
            thickness: t,
        },
    ]
}

type Split = (Vec<Rect>, Vec<Door>, Vec<WallSegment>);

/// Recursively splits the largest room along its longer axis until `count`
/// rooms exist. Each split line gets one door gap.
fn split_rooms(rng: &mut ChaCha8Rng, bounds: Rect, count: usize) -> Result<Split, Attempt> {
    let mut rects = vec![bounds];
    let mut doors: Vec<Door> = Vec::new();
    let mut walls = Vec::new();
    while rects.len() < count {
        let candidates: Vec<usize> = (0..rects.len())
            .filter(|&i| rects[i].width().max(rects[i].height()) >= 2.0 * MIN_ROOM_SIDE)
            .collect();
        let Some(&idx) = candidates
            .iter()
            .max_by(|&&a, &&b| rects[a].area().total_cmp(&rects[b].area()).then(b.cmp(&a)))
        else {
            return Err(Attempt::Fatal(SceneError::InvalidParams(format!(
                "apartment too small for {count} rooms"
            ))));
        };
        let r = rects[idx];
        let vertical = r.width() >= r.height();
        let (lo, hi) = if vertical { (r.x0, r.x1) } else { (r.y0, r.y1) };
        let (along_lo, along_hi) = if vertical { (r.y0, r.y1) } else { (r.x0, r.x1) };
        let mut chosen = None;
        for _ in 0..50 {
            let s = snap(lo + (hi - lo) * rng.gen_range(0.35..0.65));
            if s - lo < MIN_ROOM_SIDE || hi - s < MIN_ROOM_SIDE {
                continue;
            }
            // keep the new wall away from doors on the perpendicular boundary lines
            let blocks_door = doors.iter().any(|d| {
                d.vertical != vertical
                    && (d.line - along_lo).abs().min((d.line - along_hi).abs()) < 1e-9
                    && (d.center - s).abs() < DOOR_WIDTH / 2.0 + 0.7
            });
            if !blocks_door {
                chosen = Some(s);
                break;
            }
        }
        let Some(s) = chosen else {
            return Err(Attempt::Retry("no valid room split".into()));
        };
        let door_center = snap(rng.gen_range(along_lo + 0.65..along_hi - 0.65));
        let door = Door {
            vertical,
            line: s,
            center: door_center,
        };
        doors.push(door);
        let seg = |a: f64, b: f64| {
            if vertical {
                WallSegment {
                    a: [s, a],
                    b: [s, b],
                    thickness: WALL_THICKNESS,
                }
            } else {
                WallSegment {
                    a: [a, s],
                    b: [b, s],
                    thickness: WALL_THICKNESS,
                }
            }
        };
        walls.push(seg(along_lo, door_center - DOOR_WIDTH / 2.0));
        walls.push(seg(door_center + DOOR_WIDTH / 2.0, along_hi));
        let (a, b) = if vertical {
            (Rect::new(r.x0, r.y0, s, r.y1), Rect::new(s, r.y0, r.x1, r.y1))
        } else {
            (Rect::new(r.x0, r.y0, r.x1, s), Rect::new(r.x0, s, r.x1, r.y1))
        };
        rects[idx] = a;
        rects.insert(idx + 1, b);
    }
    Ok((rects, doors, walls))
}

/// Splits `total` receptacles across rooms proportionally to area, every room
/// getting at least one when there are enough to go round.
fn distribute(total: usize, rooms: &[Rect]) -> Vec<usize> {
    let area: f64 = rooms.iter().map(Rect::area).sum();
    let mut counts: Vec<usize> = rooms
        .iter()
        .map(|r| ((total as f64) * r.area() / area).floor() as usize)
        .collect();
    if total >= rooms.len() {
        for c in counts.iter_mut() {
            *c = (*c).max(1);
        }
    }
    while counts.iter().sum::<usize>() > total {
        let i = (0..counts.len()).max_by_key(|&i| counts[i]).expect("nonempty");
        counts[i] -= 1;
    }
    let mut i = 0;
    while counts.iter().sum::<usize>() < total {
        let order = {
            let mut idx: Vec<usize> = (0..rooms.len()).collect();
            idx.sort_by(|&a, &b| {
                let da = rooms[a].area() / (counts[a] as f64 + 1.0);
                let db = rooms[b].area() / (counts[b] as f64 + 1.0);
                db.total_cmp(&da).then(a.cmp(&b))
            });
            idx
        };
        counts[order[0]] += 1;
        i += 1;
        debug_assert!(i <= total);
    }
    counts
}

fn place_receptacle(
    rng: &mut ChaCha8Rng,
    room: &Room,
    doors: &[Door],
    existing: &[Receptacle],
    attempts: usize,
) -> Option<Receptacle> {
    let interior = room.rect.inset(WALL_THICKNESS / 2.0);
    for _ in 0..attempts {
        let category = RECEPTACLE_CATEGORIES[rng.gen_range(0..RECEPTACLE_CATEGORIES.len())];
        let mut w = round_cm(rng.gen_range(0.4..=1.6));
        let mut d = round_cm(rng.gen_range(0.35..=0.7));
        let h = round_cm(rng.gen_range(0.45..=0.95));
        if rng.gen_bool(0.5) {
            std::mem::swap(&mut w, &mut d);
        }
        if w > interior.width() || d > interior.height() {
            continue;
        }
        let against_wall = rng.gen_bool(0.6);
        let (x0, y0) = if against_wall {
            match rng.gen_range(0..4) {
                0 => (rng.gen_range(interior.x0..=interior.x1 - w), interior.y0),
                1 => (rng.gen_range(interior.x0..=interior.x1 - w), interior.y1 - d),
                2 => (interior.x0, rng.gen_range(interior.y0..=interior.y1 - d)),
                _ => (interior.x1 - w, rng.gen_range(interior.y0..=interior.y1 - d)),
            }
        } else {
            let free = interior.inset(RECEPTACLE_CLEARANCE);
            if free.width() < w || free.height() < d {
                continue;
            }
            (
                rng.gen_range(free.x0..=free.x1 - w),
                rng.gen_range(free.y0..=free.y1 - d),
            )
        };
        let footprint = Rect::new(round_cm(x0), round_cm(y0), round_cm(x0) + w, round_cm(y0) + d);
        if !interior.contains_rect(&footprint) {
            continue;
        }
        let clear_of_receptacles = existing
            .iter()
            .all(|r| !r.footprint.expand(RECEPTACLE_CLEARANCE).overlaps(&footprint));
        let clear_of_doors = doors.iter().all(|door| {
            let (px, py) = door.point();
            footprint.distance_to(px, py) >= DOOR_CLEARANCE
        });
        if !(clear_of_receptacles && clear_of_doors) {
            continue;
        }
        let surface = footprint.inset(SURFACE_INSET);
        if surface.area() < MIN_SURFACE_AREA {
            continue;
        }
        return Some(Receptacle {
            id: String::new(),
            category: category.to_string(),
            footprint,
            surface_height: h,
            surface,
            room_id: room.id.clone(),
        });
    }
    None
}

/// Marks every cell whose open interior overlaps a wall or receptacle box.
pub fn rasterize_occupancy(bounds: &Rect, walls: &[WallSegment], receptacles: &[Receptacle]) -> BitGrid {
    let rows = (bounds.height() / CELL_SIZE - 1e-9).ceil() as usize;
    let cols = (bounds.width() / CELL_SIZE - 1e-9).ceil() as usize;
    let mut grid = BitGrid::new(rows, cols, false);
    let boxes = walls
        .iter()
        .map(WallSegment::rect)
        .chain(receptacles.iter().map(|r| r.footprint));
    for r in boxes {
        mark_rect(&mut grid, &r);
    }
    grid
}

fn mark_rect(grid: &mut BitGrid, r: &Rect) {
    const EPS: f64 = 1e-9;
    let c0 = ((r.x0 + EPS) / CELL_SIZE).floor().max(0.0) as usize;
    let r0 = ((r.y0 + EPS) / CELL_SIZE).floor().max(0.0) as usize;
    let c1 = ((r.x1 - EPS) / CELL_SIZE).ceil().max(0.0) as usize;
    let r1 = ((r.y1 - EPS) / CELL_SIZE).ceil().max(0.0) as usize;
    for row in r0..r1.min(grid.rows()) {
        for col in c0..c1.min(grid.cols()) {
            grid.set(Cell::new(row, col), true);
        }
    }
}

/// Navigable cells: free cells at least `ceil(robot_radius / cell)` cells
/// (Chebyshev) from any occupied cell, restricted to the largest 4-connected
/// component.
pub fn build_nav_grid(scene: &Scene, robot_radius: f64) -> Result<BitGrid, SceneError> {
    nav_from_occupancy(&scene.occupancy_grid, robot_radius)
}

pub(crate) fn nav_from_occupancy(occupancy: &BitGrid, robot_radius: f64) -> Result<BitGrid, SceneError> {
    if !(robot_radius >= 0.0) {
        return Err(SceneError::InvalidParams("robot radius must be nonnegative".into()));
    }
    let cells = (robot_radius / CELL_SIZE - 1e-9).ceil().max(0.0) as usize;
    let nav = occupancy.dilate_chebyshev(cells).not().largest_component();
    if nav.count_ones() == 0 {
        return Err(SceneError::NoNavigableCell);
    }
    Ok(nav)
}
