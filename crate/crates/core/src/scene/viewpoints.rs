//! Viewpoint sampling around receptacles.

use serde::{Deserialize, Serialize};

use super::{Receptacle, Scene};
use crate::grid::CELL_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewpointParams {
    /// Lattice spacing of candidate points in meters.
    pub spacing: f64,
    /// Candidates are kept when their distance to the footprint lies in
    /// `[min_distance, max_distance]`.
    pub min_distance: f64,
    pub max_distance: f64,
}

impl Default for ViewpointParams {
    fn default() -> Self {
        Self {
            spacing: 0.1,
            min_distance: 0.3,
            max_distance: 1.5,
        }
    }
}

/// Candidate points on a lattice `(i*s + h/2, j*s + h/2)` in the ring around
/// the footprint, kept when navigable. The list may be empty.
pub fn generate_viewpoints(scene: &Scene, receptacle: &Receptacle, params: &ViewpointParams) -> Vec<[f64; 2]> {
    let s = params.spacing;
    let offset = CELL_SIZE / 2.0;
    let fp = receptacle.footprint.expand(params.max_distance);
    let i0 = ((fp.x0 - offset) / s).floor() as i64;
    let i1 = ((fp.x1 - offset) / s).ceil() as i64;
    let j0 = ((fp.y0 - offset) / s).floor() as i64;
    let j1 = ((fp.y1 - offset) / s).ceil() as i64;
    let mut out = Vec::new();
    for j in j0..=j1 {
        for i in i0..=i1 {
            let x = i as f64 * s + offset;
            let y = j as f64 * s + offset;
            let d = receptacle.footprint.distance_to(x, y);
            if d < params.min_distance - 1e-9 || d > params.max_distance + 1e-9 {
                continue;
            }
            if scene.is_navigable(x, y) {
                out.push([x, y]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::grid::BitGrid;
    use crate::scene::generate::{nav_from_occupancy, rasterize_occupancy};
    use crate::scene::WallSegment;

    fn open_scene(walls: Vec<WallSegment>, rec: Receptacle) -> Scene {
        let bounds = Rect::new(0.0, 0.0, 8.0, 8.0);
        let occ = rasterize_occupancy(&bounds, &walls, std::slice::from_ref(&rec));
        let nav = nav_from_occupancy(&occ, 0.25).unwrap();
        Scene {
            id: "t".into(),
            seed: 0,
            bounds,
            rooms: vec![],
            wall_segments: walls,
            receptacles: vec![rec],
            robot_radius: 0.25,
            occupancy_grid: occ,
            nav_grid: nav,
            catalog: vec![],
        }
    }

    fn table(x0: f64, y0: f64, x1: f64, y1: f64) -> Receptacle {
        let footprint = Rect::new(x0, y0, x1, y1);
        Receptacle {
            id: "rec_0".into(),
            category: "table".into(),
            footprint,
            surface_height: 0.75,
            surface: footprint.inset(0.02),
            room_id: "room_0".into(),
        }
    }

    #[test]
    fn open_floor_has_many_viewpoints_on_coarse_lattice() {
        let rec = table(3.5, 3.5, 4.5, 4.0);
        let scene = open_scene(vec![], rec.clone());
        let params = ViewpointParams {
            spacing: 0.25,
            ..Default::default()
        };
        let vps = generate_viewpoints(&scene, &rec, &params);
        // brute-force oracle over the same lattice
        let mut expected = 0;
        for j in -10..60 {
            for i in -10..60 {
                let (x, y) = (i as f64 * 0.25 + 0.025, j as f64 * 0.25 + 0.025);
                let d = rec.footprint.distance_to(x, y);
                let (r, c) = crate::geometry::world_to_cell(x, y);
                let nav = scene
                    .nav_grid
                    .checked(r, c)
                    .is_some_and(|cell| *scene.nav_grid.get(cell));
                if (0.3..=1.5).contains(&d) && nav {
                    expected += 1;
                }
            }
        }
        assert_eq!(vps.len(), expected);
        assert!(vps.len() >= 8);
        for p in &vps {
            assert!(rec.footprint.distance_to(p[0], p[1]) <= 1.5 + 1e-9);
            assert!(scene.is_navigable(p[0], p[1]));
        }
    }

    #[test]
    fn enclosed_receptacle_has_none() {
        let rec = table(3.7, 3.7, 4.3, 4.3);
        let wall = |a: [f64; 2], b: [f64; 2]| WallSegment { a, b, thickness: 0.5 };
        // closed thick-walled box: the inside is cut off from the main floor and
        // the outside lies beyond 1.5 m
        let walls = vec![
            wall([2.6, 2.6], [5.4, 2.6]),
            wall([2.6, 5.4], [5.4, 5.4]),
            wall([2.6, 2.6], [2.6, 5.4]),
            wall([5.4, 2.6], [5.4, 5.4]),
        ];
        let scene = open_scene(walls, rec.clone());
        assert!(generate_viewpoints(&scene, &rec, &ViewpointParams::default()).is_empty());
    }

    #[test]
    fn far_candidates_rejected() {
        let rec = table(3.5, 3.5, 4.5, 4.0);
        let mut scene = open_scene(vec![], rec.clone());
        scene.nav_grid = BitGrid::new(scene.nav_grid.rows(), scene.nav_grid.cols(), true);
        let vps = generate_viewpoints(&scene, &rec, &ViewpointParams::default());
        assert!(vps.iter().all(|p| rec.footprint.distance_to(p[0], p[1]) <= 1.5 + 1e-9));
        // a point 1.6 m to the right of the footprint is not among them
        assert!(!vps
            .iter()
            .any(|p| (p[0] - 6.1).abs() < 0.03 && (p[1] - 3.75).abs() < 0.03));
    }
}
