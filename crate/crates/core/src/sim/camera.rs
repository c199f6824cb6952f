//! Pinhole depth + instance-segmentation camera over a world of boxes.

use serde::{Deserialize, Serialize};

use super::robot::RobotState;
use crate::scene::{ObjectInstance, Scene, Support, WALL_HEIGHT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub hfov: f64,
    pub mount_height: f64,
    pub max_range: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            hfov: 69f64.to_radians(),
            mount_height: 1.2,
            max_range: 10.0,
        }
    }
}

impl CameraModel {
    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Normalized image-plane offsets `(a, b)` of a pixel center: the ray is
    /// `forward + a * right - b * up`.
    pub fn pixel_offsets(&self, u: usize, v: usize) -> (f64, f64) {
        let f = self.focal();
        let (cx, cy) = self.principal_point();
        ((u as f64 + 0.5 - cx) / f, (v as f64 + 0.5 - cy) / f)
    }
}

/// Camera position and orthonormal basis in the world frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub forward: [f64; 3],
    pub right: [f64; 3],
    pub up: [f64; 3],
}

impl CameraPose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64, pitch: f64) -> Self {
        let (sy, cy) = yaw.sin_cos();
        let (st, ct) = pitch.sin_cos();
        Self {
            position: [x, y, z],
            forward: [ct * cy, ct * sy, st],
            right: [sy, -cy, 0.0],
            up: [-st * cy, -st * sy, ct],
        }
    }

    pub fn of_robot(state: &RobotState, camera: &CameraModel) -> Self {
        Self::new(
            state.base.x,
            state.base.y,
            camera.mount_height,
            state.base.yaw + state.joints.head_pan,
            state.joints.head_tilt,
        )
    }

    /// Unnormalized ray direction whose forward component is 1, so the ray
    /// parameter equals z-depth.
    pub fn ray(&self, a: f64, b: f64) -> [f64; 3] {
        let mut d = [0.0; 3];
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = self.forward[k] + a * self.right[k] - b * self.up[k];
        }
        d
    }

    /// World point of a pixel at a given z-depth.
    pub fn backproject(&self, a: f64, b: f64, depth: f64) -> [f64; 3] {
        let d = self.ray(a, b);
        [
            self.position[0] + depth * d[0],
            self.position[1] + depth * d[1],
            self.position[2] + depth * d[2],
        ]
    }
}

/// Axis-aligned box with a semantic instance id (0 for walls).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub id: u16,
}

impl Box3 {
    /// Entry parameter of the ray in the box, if it hits in `[0, t_max)`.
    #[inline]
    fn intersect(&self, o: &[f64; 3], inv: &[f64; 3], t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let mut ta = (self.min[k] - o[k]) * inv[k];
            let mut tb = (self.max[k] - o[k]) * inv[k];
            if ta.is_nan() || tb.is_nan() {
                // ray parallel to and exactly on a slab plane: treat as outside
                return None;
            }
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Instance id layout: receptacles take `1..=R` in scene order, objects follow
/// in episode order.
pub fn object_instance_id(scene: &Scene, object_index: usize) -> u16 {
    (scene.receptacles.len() + 1 + object_index) as u16
}

/// Boxes of the world, bucketed on a coarse 2-D grid for ray traversal.
#[derive(Clone, Debug)]
pub struct WorldGeometry {
    boxes: Vec<Box3>,
    origin: [f64; 2],
    bucket: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

const BUCKET_SIZE: f64 = 0.5;

impl WorldGeometry {
    pub fn build(scene: &Scene, objects: &[ObjectInstance]) -> Self {
        let mut boxes = Vec::new();
        for w in &scene.wall_segments {
            let r = w.rect();
            boxes.push(Box3 {
                min: [r.x0, r.y0, 0.0],
                max: [r.x1, r.y1, WALL_HEIGHT],
                id: 0,
            });
        }
        for (i, rec) in scene.receptacles.iter().enumerate() {
            let r = rec.footprint;
            boxes.push(Box3 {
                min: [r.x0, r.y0, 0.0],
                max: [r.x1, r.y1, rec.surface_height],
                id: (i + 1) as u16,
            });
        }
        for (j, o) in objects.iter().enumerate() {
            if o.support == Support::Held {
                continue;
            }
            let r = o.footprint();
            boxes.push(Box3 {
                min: [r.x0, r.y0, o.pose.z],
                max: [r.x1, r.y1, o.pose.z + o.height],
                id: object_instance_id(scene, j),
            });
        }
        Self::from_boxes(
            boxes,
            scene.bounds.x0,
            scene.bounds.y0,
            scene.bounds.width(),
            scene.bounds.height(),
        )
    }

    pub fn from_boxes(boxes: Vec<Box3>, x0: f64, y0: f64, width: f64, height: f64) -> Self {
        let margin = 1.0;
        let origin = [x0 - margin, y0 - margin];
        let nx = ((width + 2.0 * margin) / BUCKET_SIZE).ceil() as usize + 1;
        let ny = ((height + 2.0 * margin) / BUCKET_SIZE).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (i, b) in boxes.iter().enumerate() {
            let bx0 = (((b.min[0] - origin[0]) / BUCKET_SIZE).floor().max(0.0) as usize).min(nx - 1);
            let bx1 = (((b.max[0] - origin[0]) / BUCKET_SIZE).floor().max(0.0) as usize).min(nx - 1);
            let by0 = (((b.min[1] - origin[1]) / BUCKET_SIZE).floor().max(0.0) as usize).min(ny - 1);
            let by1 = (((b.max[1] - origin[1]) / BUCKET_SIZE).floor().max(0.0) as usize).min(ny - 1);
            for by in by0..=by1 {
                for bx in bx0..=bx1 {
                    buckets[by * nx + bx].push(i as u32);
                }
            }
        }
        Self {
            boxes,
            origin,
            bucket: BUCKET_SIZE,
            nx,
            ny,
            buckets,
        }
    }

    pub fn boxes(&self) -> &[Box3] {
        &self.boxes
    }

    /// Nearest hit along `o + t d` for `t` in `[0, t_max]`: the floor plane
    /// `z = 0` (id 0) or a box. Returns `(t, id)`.
    pub fn cast(&self, o: &[f64; 3], d: &[f64; 3], t_max: f64, stamp: &mut Stamp) -> Option<(f64, u16)> {
        let mut best_t = t_max;
        let mut best_id = None;
        if d[2] < 0.0 {
            let t = -o[2] / d[2];
            if t <= best_t {
                best_t = t;
                best_id = Some(0u16);
            }
        }
        let inv = [1.0 / d[0], 1.0 / d[1], 1.0 / d[2]];
        stamp.next();

        // 2-D DDA over the buckets
        let px = (o[0] - self.origin[0]) / self.bucket;
        let py = (o[1] - self.origin[1]) / self.bucket;
        let mut ix = px.floor() as isize;
        let mut iy = py.floor() as isize;
        let step_x: isize = if d[0] > 0.0 { 1 } else { -1 };
        let step_y: isize = if d[1] > 0.0 { 1 } else { -1 };
        let t_delta_x = if d[0] != 0.0 {
            (self.bucket / d[0]).abs()
        } else {
            f64::INFINITY
        };
        let t_delta_y = if d[1] != 0.0 {
            (self.bucket / d[1]).abs()
        } else {
            f64::INFINITY
        };
        let mut t_next_x = if d[0] > 0.0 {
            ((ix as f64 + 1.0) - px) * self.bucket / d[0]
        } else if d[0] < 0.0 {
            (px - ix as f64) * self.bucket / -d[0]
        } else {
            f64::INFINITY
        };
        let mut t_next_y = if d[1] > 0.0 {
            ((iy as f64 + 1.0) - py) * self.bucket / d[1]
        } else if d[1] < 0.0 {
            (py - iy as f64) * self.bucket / -d[1]
        } else {
            f64::INFINITY
        };
        loop {
            if ix < 0 || iy < 0 || ix as usize >= self.nx || iy as usize >= self.ny {
                break;
            }
            for &bi in &self.buckets[iy as usize * self.nx + ix as usize] {
                if !stamp.visit(bi as usize, self.boxes.len()) {
                    continue;
                }
                let b = &self.boxes[bi as usize];
                if let Some(t) = b.intersect(o, &inv, best_t) {
                    if t < best_t || best_id.is_none() {
                        best_t = t;
                        best_id = Some(b.id);
                    }
                }
            }
            let t_exit = t_next_x.min(t_next_y);
            if t_exit >= best_t {
                break;
            }
            if t_next_x < t_next_y {
                ix += step_x;
                t_next_x += t_delta_x;
            } else {
                iy += step_y;
                t_next_y += t_delta_y;
            }
        }
        best_id.map(|id| (best_t, id))
    }
}

/// Per-ray visit markers so a box spanning several buckets is tested once.
#[derive(Default)]
pub struct Stamp {
    marks: Vec<u32>,
    current: u32,
}

impl Stamp {
    fn next(&mut self) {
        self.current = self.current.wrapping_add(1);
        if self.current == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.current = 1;
        }
    }

    fn visit(&mut self, i: usize, n: usize) -> bool {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        if self.marks[i] == self.current {
            false
        } else {
            self.marks[i] = self.current;
            true
        }
    }
}

/// Depth (meters, 0 = no return) and instance ids, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub semantic: Vec<u16>,
}

impl Frame {
    pub fn count_ids(&self, ids: &[u16]) -> usize {
        self.semantic.iter().filter(|s| **s != 0 && ids.contains(s)).count()
    }
}

pub fn render(world: &WorldGeometry, camera: &CameraModel, pose: &CameraPose) -> Frame {
    let n = camera.pixel_count();
    let mut depth = vec![0f32; n];
    let mut semantic = vec![0u16; n];
    let mut stamp = Stamp::default();
    for v in 0..camera.height {
        for u in 0..camera.width {
            let (a, b) = camera.pixel_offsets(u, v);
            let d = pose.ray(a, b);
            if let Some((t, id)) = world.cast(&pose.position, &d, camera.max_range, &mut stamp) {
                if t > 0.0 {
                    depth[v * camera.width + u] = t as f32;
                    semantic[v * camera.width + u] = id;
                }
            }
        }
    }
    Frame {
        width: camera.width,
        height: camera.height,
        depth,
        semantic,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_cast(boxes: &[Box3], o: &[f64; 3], d: &[f64; 3], t_max: f64) -> Option<(f64, u16)> {
        let mut best: Option<(f64, u16)> = None;
        if d[2] < 0.0 {
            let t = -o[2] / d[2];
            if t <= t_max {
                best = Some((t, 0));
            }
        }
        let inv = [1.0 / d[0], 1.0 / d[1], 1.0 / d[2]];
        for b in boxes {
            let limit = best.map_or(t_max, |(t, _)| t);
            if let Some(t) = b.intersect(o, &inv, limit) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, b.id));
                }
            }
        }
        best
    }

    #[test]
    fn bucketed_cast_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let boxes: Vec<Box3> = (0..40)
            .map(|i| {
                let x = rng.gen_range(0.0..8.0);
                let y = rng.gen_range(0.0..8.0);
                let w = rng.gen_range(0.05..1.5);
                let h = rng.gen_range(0.05..1.5);
                let z0 = rng.gen_range(0.0..1.0);
                Box3 {
                    min: [x, y, z0],
                    max: [x + w, y + h, z0 + rng.gen_range(0.05..1.5)],
                    id: i + 1,
                }
            })
            .collect();
        let world = WorldGeometry::from_boxes(boxes.clone(), 0.0, 0.0, 10.0, 10.0);
        let mut stamp = Stamp::default();
        for _ in 0..5000 {
            let o = [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), 1.2];
            let pose = CameraPose::new(o[0], o[1], o[2], rng.gen_range(-3.2..3.2), rng.gen_range(-1.0..0.3));
            let d = pose.ray(rng.gen_range(-0.7..0.7), rng.gen_range(-0.5..0.5));
            let fast = world.cast(&o, &d, 10.0, &mut stamp);
            let slow = brute_cast(&boxes, &o, &d, 10.0);
            match (fast, slow) {
                (None, None) => {}
                (Some((a, ia)), Some((b, ib))) => {
                    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                    if (a - b).abs() > 1e-12 {
                        assert_eq!(ia, ib);
                    }
                }
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn depth_equals_forward_distance() {
        let pose = CameraPose::new(0.0, 0.0, 1.0, 0.3, -0.2);
        let cam = CameraModel::default();
        let (a, b) = cam.pixel_offsets(17, 90);
        let p = pose.backproject(a, b, 2.0);
        let rel = [p[0] - 0.0, p[1] - 0.0, p[2] - 1.0];
        let fwd: f64 = (0..3).map(|k| rel[k] * pose.forward[k]).sum();
        assert!((fwd - 2.0).abs() < 1e-12);
    }
}
