//! Heuristic top-down grasp scoring and placement-point estimation.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::robot::{ARM_ROOT_OFFSET, EXTENSION_LIMITS, LIFT_LIMITS};
use crate::sim::{CameraModel, CameraPose, Observation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManipError {
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("invalid gripper geometry: {0}")]
    InvalidGripper(String),
    #[error("place target lost")]
    PlaceTargetLost,
    #[error("out of workspace")]
    OutOfWorkspace,
}

/// Points in the robot base frame (x forward, y left, z up, origin on the
/// floor below the base center).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub labels: Option<Vec<u16>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points, labels: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Backprojects the pixels whose instance id passes `select`.
    pub fn from_observation(obs: &Observation, camera: &CameraModel, select: impl Fn(u16) -> bool) -> Self {
        let pose = CameraPose::new(0.0, 0.0, camera.mount_height, obs.joints.head_pan, obs.joints.head_tilt);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for v in 0..obs.height {
            for u in 0..obs.width {
                let i = v * obs.width + u;
                let id = obs.semantic[i];
                let depth = obs.depth[i] as f64;
                if id == 0 || !(depth > 0.0) || !select(id) {
                    continue;
                }
                let (a, b) = camera.pixel_offsets(u, v);
                points.push(pose.backproject(a, b, depth));
                labels.push(id);
            }
        }
        Self {
            points,
            labels: Some(labels),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperGeometry {
    pub finger_width: f64,
    pub max_aperture: f64,
    /// Extent of the fingers along the closing line's normal.
    pub finger_depth: f64,
}

impl Default for GripperGeometry {
    fn default() -> Self {
        Self {
            finger_width: 0.01,
            max_aperture: 0.08,
            finger_depth: 0.02,
        }
    }
}

impl GripperGeometry {
    pub fn validate(&self) -> Result<(), ManipError> {
        let ok = [self.finger_width, self.max_aperture, self.finger_depth]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(ManipError::InvalidGripper("dimensions must be positive".into()));
        }
        if self.max_aperture <= 2.0 * self.finger_width {
            return Err(ManipError::InvalidGripper(
                "aperture must exceed twice the finger width".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspParams {
    pub voxel_size: f64,
    /// Fraction of occupied voxels, by height, kept as the graspable top.
    pub top_fraction: f64,
    pub threshold: f64,
    /// Radius of the morphological closing applied to the 2D occupancy, so
    /// that sparse depth returns still form solid tops.
    pub close_radius: usize,
}

impl Default for GraspParams {
    fn default() -> Self {
        Self {
            voxel_size: 0.005,
            top_fraction: 0.1,
            threshold: 0.4,
            close_radius: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    /// Voxel coordinates `(ix, iy)` of the grasp center.
    pub voxel: (i64, i64),
    /// Grasp center in meters (voxel center; z at the top of the column).
    pub position: [f64; 3],
    /// 0 closes the fingers along x, pi/2 along y.
    pub grasp_yaw: f64,
    pub score: f64,
}

/// Occupied columns of the top slice on a dense local grid.
pub(crate) struct TopGrid {
    pub ix0: i64,
    pub iy0: i64,
    pub w: usize,
    pub h: usize,
    pub occ: Vec<bool>,
    pub top: Vec<i64>,
}

impl TopGrid {
    pub fn at(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 || x as usize >= self.w || y as usize >= self.h {
            return false;
        }
        self.occ[y as usize * self.w + x as usize]
    }
}

/// Integer gripper dimensions in voxels: (half aperture, finger width, half
/// finger depth).
pub(crate) fn gripper_voxels(g: &GripperGeometry, voxel: f64) -> (i64, i64, i64) {
    let half_ap = (g.max_aperture / (2.0 * voxel)).round().max(1.0) as i64;
    let fw = (g.finger_width / voxel).round().max(1.0) as i64;
    let hd = (g.finger_depth / (2.0 * voxel)).round() as i64;
    (half_ap, fw, hd)
}

pub(crate) fn top_grid(cloud: &PointCloud, params: &GraspParams, margin: i64) -> TopGrid {
    let v = params.voxel_size;
    let voxels: BTreeSet<(i64, i64, i64)> = cloud
        .points
        .iter()
        .map(|p| {
            (
                (p[0] / v).floor() as i64,
                (p[1] / v).floor() as i64,
                (p[2] / v).floor() as i64,
            )
        })
        .collect();
    let mut zs: Vec<i64> = voxels.iter().map(|k| k.2).collect();
    zs.sort_unstable();
    // nearest-rank percentile
    let rank = ((1.0 - params.top_fraction) * zs.len() as f64).ceil() as usize;
    let z_cut = zs[rank.clamp(1, zs.len()) - 1];
    let kept: Vec<&(i64, i64, i64)> = voxels.iter().filter(|k| k.2 >= z_cut).collect();
    let ix0 = kept.iter().map(|k| k.0).min().unwrap() - margin;
    let iy0 = kept.iter().map(|k| k.1).min().unwrap() - margin;
    let w = (kept.iter().map(|k| k.0).max().unwrap() + margin - ix0 + 1) as usize;
    let h = (kept.iter().map(|k| k.1).max().unwrap() + margin - iy0 + 1) as usize;
    let mut occ = vec![false; w * h];
    let mut top = vec![i64::MIN; w * h];
    for k in kept {
        let i = (k.1 - iy0) as usize * w + (k.0 - ix0) as usize;
        occ[i] = true;
        top[i] = top[i].max(k.2);
    }
    let r = params.close_radius as i64;
    if r > 0 {
        let dilated = morph(&occ, w, h, r, true);
        let closed = morph(&dilated, w, h, r, false);
        // filled voxels take the highest top among their neighbors
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let i = y as usize * w + x as usize;
                if closed[i] && !occ[i] {
                    let mut best = i64::MIN;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (nx, ny) = (x + dx, y + dy);
                            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                                best = best.max(top[ny as usize * w + nx as usize]);
                            }
                        }
                    }
                    top[i] = best;
                }
            }
        }
        occ = closed;
    }
    TopGrid {
        ix0,
        iy0,
        w,
        h,
        occ,
        top,
    }
}

/// Square-window dilation (`grow`) or erosion on a dense grid.
fn morph(src: &[bool], w: usize, h: usize, r: i64, grow: bool) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut any = false;
            let mut all = true;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    let v = nx >= 0
                        && ny >= 0
                        && (nx as usize) < w
                        && (ny as usize) < h
                        && src[ny as usize * w + nx as usize];
                    any |= v;
                    all &= v;
                }
            }
            out[y as usize * w + x as usize] = if grow { any } else { all };
        }
    }
    out
}

/// Unsmoothed score of a grasp centered at grid column `(x, y)`. `across` is
/// true when the fingers close along x.
pub(crate) fn raw_score(g: &TopGrid, x: i64, y: i64, along_x: bool, dims: (i64, i64, i64)) -> f64 {
    let (half_ap, fw, hd) = dims;
    let occ = |a: i64, d: i64| {
        if along_x {
            g.at(x + a, y + d)
        } else {
            g.at(x + d, y + a)
        }
    };
    let mut rows_hit = 0usize;
    let mut offset_sum = 0i64;
    let mut count = 0i64;
    let mut empty = 0usize;
    for d in -hd..=hd {
        let mut hit = false;
        for a in -(half_ap - 1)..=(half_ap - 1) {
            if occ(a, d) {
                hit = true;
                offset_sum += a;
                count += 1;
            }
        }
        rows_hit += hit as usize;
        for k in 0..fw {
            empty += !occ(half_ap + k, d) as usize;
            empty += !occ(-(half_ap + k), d) as usize;
        }
    }
    if count == 0 {
        return 0.0;
    }
    let rows = (2 * hd + 1) as f64;
    let occupancy = rows_hit as f64 / rows;
    let balance = 1.0 - (offset_sum as f64 / count as f64).abs() / half_ap as f64;
    let emptiness = empty as f64 / (2 * fw) as f64 / rows;
    occupancy * balance.max(0.0) * emptiness
}

/// Scores top-down grasps over the top slice of `cloud`. Candidates at or
/// above the threshold are returned best first; equal scores keep
/// row-major order with yaw 0 before yaw pi/2.
pub fn score_grasps(
    cloud: &PointCloud,
    gripper: &GripperGeometry,
    params: &GraspParams,
) -> Result<Vec<GraspCandidate>, ManipError> {
    gripper.validate()?;
    if cloud.is_empty() {
        return Err(ManipError::EmptyCloud);
    }
    let dims = gripper_voxels(gripper, params.voxel_size);
    let margin = dims.0 + dims.1 + 1;
    let g = top_grid(cloud, params, margin);
    let yaws = [(true, 0.0), (false, std::f64::consts::FRAC_PI_2)];
    let raw: Vec<Vec<f64>> = yaws
        .iter()
        .map(|&(along_x, _)| {
            let mut s = vec![0.0; g.w * g.h];
            for y in 0..g.h as i64 {
                for x in 0..g.w as i64 {
                    if g.at(x, y) {
                        s[y as usize * g.w + x as usize] = raw_score(&g, x, y, along_x, dims);
                    }
                }
            }
            s
        })
        .collect();
    let v = params.voxel_size;
    let mut out = Vec::new();
    for y in 0..g.h as i64 {
        for x in 0..g.w as i64 {
            if !g.at(x, y) {
                continue;
            }
            let i = y as usize * g.w + x as usize;
            for (k, &(_, yaw)) in yaws.iter().enumerate() {
                let s = &raw[k];
                let at = |nx: i64, ny: i64| {
                    if g.at(nx, ny) {
                        s[ny as usize * g.w + nx as usize]
                    } else {
                        0.0
                    }
                };
                let mean = (at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1)) / 4.0;
                let score = s[i] * mean;
                if score >= params.threshold {
                    let (ix, iy) = (x + g.ix0, y + g.iy0);
                    out.push(GraspCandidate {
                        voxel: (ix, iy),
                        position: [
                            (ix as f64 + 0.5) * v,
                            (iy as f64 + 0.5) * v,
                            (g.top[i] as f64 + 0.5) * v,
                        ],
                        grasp_yaw: yaw,
                        score,
                    });
                }
            }
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    pub samples: usize,
    pub radius_xy: f64,
    pub height_tolerance: f64,
}

impl Default for PlacementParams {
    fn default() -> Self {
        Self {
            samples: 50,
            radius_xy: 0.10,
            height_tolerance: 0.03,
        }
    }
}

/// Number of cloud points within the xy radius and height band of `p`.
pub fn neighbor_count(cloud: &PointCloud, p: &[f64; 3], params: &PlacementParams) -> usize {
    let r2 = params.radius_xy * params.radius_xy;
    cloud
        .points
        .iter()
        .filter(|q| {
            let dx = q[0] - p[0];
            let dy = q[1] - p[1];
            dx * dx + dy * dy <= r2 && (q[2] - p[2]).abs() <= params.height_tolerance
        })
        .count()
}

/// Samples candidate points and returns the one with the most neighbors;
/// ties go to the earliest sample.
pub fn estimate_placement_point(
    cloud: &PointCloud,
    params: &PlacementParams,
    seed: u64,
) -> Result<[f64; 3], ManipError> {
    if cloud.is_empty() {
        return Err(ManipError::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cloud.len();
    let picks: Vec<usize> = if n >= params.samples {
        sample(&mut rng, n, params.samples).into_vec()
    } else {
        (0..params.samples).map(|_| rng.gen_range(0..n)).collect()
    };
    let mut best = (0usize, picks[0]);
    for (k, &i) in picks.iter().enumerate() {
        let c = neighbor_count(cloud, &cloud.points[i], params);
        if k == 0 || c > best.0 {
            best = (c, i);
        }
    }
    Ok(cloud.points[best.1])
}

/// Joint targets that put the end-effector above a placement point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReleasePlan {
    pub lift: f64,
    pub extension: f64,
}

/// `point` is in the base frame of the robot before it enters manipulation
/// mode; the arm then reaches along that frame's x axis.
pub fn plan_release(point: &[f64; 3], clearance: f64) -> Result<ReleasePlan, ManipError> {
    let lift = point[2] + clearance;
    let extension = (point[0].hypot(point[1]) - ARM_ROOT_OFFSET).max(0.0);
    if lift < LIFT_LIMITS.0 || lift > LIFT_LIMITS.1 || extension > EXTENSION_LIMITS.1 {
        return Err(ManipError::OutOfWorkspace);
    }
    Ok(ReleasePlan { lift, extension })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_top(cx: f64, cy: f64, half: f64, z: f64, v: f64) -> Vec<[f64; 3]> {
        let n = (2.0 * half / v).round() as i64;
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push([cx - half + (i as f64 + 0.5) * v, cy - half + (j as f64 + 0.5) * v, z]);
            }
        }
        pts
    }

    #[test]
    fn four_cm_box_scores_high_at_center() {
        let v = 0.005;
        let cloud = PointCloud::new(box_top(0.5, 0.1, 0.02, 0.8, v));
        let c = score_grasps(&cloud, &GripperGeometry::default(), &GraspParams::default()).unwrap();
        let best = c[0];
        assert!(best.score > 0.8, "score {}", best.score);
        assert!((best.position[0] - 0.5).abs() <= v + 1e-9);
        assert!((best.position[1] - 0.1).abs() <= v + 1e-9);
    }

    #[test]
    fn large_plane_has_no_candidates() {
        let cloud = PointCloud::new(box_top(0.0, 0.0, 0.5, 0.7, 0.005));
        let c = score_grasps(&cloud, &GripperGeometry::default(), &GraspParams::default()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn empty_cloud_errors() {
        let r = score_grasps(
            &PointCloud::default(),
            &GripperGeometry::default(),
            &GraspParams::default(),
        );
        assert_eq!(r, Err(ManipError::EmptyCloud));
        assert_eq!(
            estimate_placement_point(&PointCloud::default(), &PlacementParams::default(), 0),
            Err(ManipError::EmptyCloud)
        );
    }

    #[test]
    fn single_point_is_its_own_placement() {
        let cloud = PointCloud::new(vec![[0.3, 0.2, 0.7]]);
        assert_eq!(
            estimate_placement_point(&cloud, &PlacementParams::default(), 5).unwrap(),
            [0.3, 0.2, 0.7]
        );
    }

    #[test]
    fn release_plan_workspace() {
        assert_eq!(plan_release(&[1.2, 0.0, 1.2], 0.05), Err(ManipError::OutOfWorkspace));
        let p = plan_release(&[0.385, 0.0, 0.6], 0.05).unwrap();
        assert!((p.lift - 0.65).abs() < 1e-12 && (p.extension - 0.185).abs() < 1e-12);
    }
}
