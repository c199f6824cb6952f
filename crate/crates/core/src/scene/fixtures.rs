//! Hand-authored single-room scenes and episodes with the target and the goal
//! receptacle in line of sight of the start pose.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use super::generate::{nav_from_occupancy, rasterize_occupancy};
use super::viewpoints::{generate_viewpoints, ViewpointParams};
use super::{
    Category, CategoryKind, Episode, EpisodeSplit, InstanceSplit, ObjectInstance, ObjectPose, Placement, Receptacle,
    Room, Scene, Support, WallSegment, RECEPTACLE_CATEGORIES,
};
use crate::geometry::{Pose2, Rect};

struct Layout {
    /// Room extent along the robot's initial heading and across it.
    length: f64,
    width: f64,
    /// Robot heading in the world frame (multiple of 90 degrees).
    yaw: f64,
    start_ahead: f64,
    goal_behind: f64,
    lateral: f64,
    start_category: &'static str,
    goal_category: &'static str,
    surface_height: f64,
    goal_height: f64,
    object_category: &'static str,
}

const LAYOUTS: [Layout; 5] = [
    Layout {
        length: 7.0,
        width: 5.0,
        yaw: 0.0,
        start_ahead: 2.0,
        goal_behind: 2.0,
        lateral: 0.0,
        start_category: "table",
        goal_category: "counter",
        surface_height: 0.75,
        goal_height: 0.9,
        object_category: "cup",
    },
    Layout {
        length: 7.0,
        width: 6.0,
        yaw: FRAC_PI_2,
        start_ahead: 2.0,
        goal_behind: 2.2,
        lateral: 0.3,
        start_category: "chest_of_drawers",
        goal_category: "table",
        surface_height: 0.8,
        goal_height: 0.7,
        object_category: "bowl",
    },
    Layout {
        length: 7.5,
        width: 5.0,
        yaw: std::f64::consts::PI,
        start_ahead: 2.2,
        goal_behind: 2.0,
        lateral: -0.3,
        start_category: "counter",
        goal_category: "bench",
        surface_height: 0.9,
        goal_height: 0.5,
        object_category: "book",
    },
    Layout {
        length: 7.0,
        width: 5.5,
        yaw: -FRAC_PI_2,
        start_ahead: 1.8,
        goal_behind: 2.0,
        lateral: 0.2,
        start_category: "table",
        goal_category: "cabinet",
        surface_height: 0.7,
        goal_height: 0.85,
        object_category: "apple",
    },
    Layout {
        length: 8.0,
        width: 5.0,
        yaw: 0.0,
        start_ahead: 2.5,
        goal_behind: 2.3,
        lateral: -0.2,
        start_category: "stand",
        goal_category: "shelves",
        surface_height: 0.6,
        goal_height: 0.8,
        object_category: "mug",
    },
];

/// Number of fixtures in the trivial suite.
pub const TRIVIAL_SUITE_LEN: usize = LAYOUTS.len();

fn receptacle(id: &str, category: &str, center: (f64, f64), half: (f64, f64), height: f64) -> Receptacle {
    let footprint = Rect::centered(center.0, center.1, half.0, half.1);
    Receptacle {
        id: id.to_string(),
        category: category.to_string(),
        footprint,
        surface_height: height,
        surface: footprint.inset(0.02),
        room_id: "room_0".to_string(),
    }
}

/// Builds fixture `index` of the trivial suite.
pub fn trivial_fixture(index: usize) -> (Scene, Episode) {
    let l = &LAYOUTS[index % LAYOUTS.len()];
    let along_x = l.yaw.cos().abs() > 0.5;
    let (w, h) = if along_x {
        (l.length, l.width)
    } else {
        (l.width, l.length)
    };
    let bounds = Rect::new(0.0, 0.0, w, h);
    let robot = Pose2::new(w / 2.0, h / 2.0, l.yaw);
    // receptacle half extents: 0.5 m across the heading, 0.3 m along it
    let half = |along: f64, across: f64| if along_x { (along, across) } else { (across, along) };
    let start_center = robot.transform(l.start_ahead, l.lateral);
    let goal_center = robot.transform(-l.goal_behind, -l.lateral);
    let recs = vec![
        receptacle(
            "rec_0",
            l.start_category,
            start_center,
            half(0.3, 0.5),
            l.surface_height,
        ),
        receptacle("rec_1", l.goal_category, goal_center, half(0.3, 0.55), l.goal_height),
    ];
    let t = 0.1;
    let walls = vec![
        WallSegment {
            a: [0.0, 0.0],
            b: [w, 0.0],
            thickness: t,
        },
        WallSegment {
            a: [0.0, h],
            b: [w, h],
            thickness: t,
        },
        WallSegment {
            a: [0.0, 0.0],
            b: [0.0, h],
            thickness: t,
        },
        WallSegment {
            a: [w, 0.0],
            b: [w, h],
            thickness: t,
        },
    ];
    let occupancy = rasterize_occupancy(&bounds, &walls, &recs);
    let nav = nav_from_occupancy(&occupancy, 0.25).expect("fixture room is navigable");
    let scene = Scene {
        id: format!("trivial_scene_{index}"),
        seed: index as u64,
        bounds,
        rooms: vec![Room {
            id: "room_0".into(),
            rect: bounds,
        }],
        wall_segments: walls,
        receptacles: recs,
        robot_radius: 0.25,
        occupancy_grid: occupancy,
        nav_grid: nav,
        catalog: RECEPTACLE_CATEGORIES
            .iter()
            .map(|n| Category {
                name: n.to_string(),
                kind: CategoryKind::Receptacle,
                split: None,
            })
            .collect(),
    };

    // target near the robot-facing edge of the start receptacle, distractor on the far side
    let place = |ahead: f64, lat: f64| {
        let (x, y) = robot.transform(ahead, lat);
        ObjectPose {
            x,
            y,
            z: l.surface_height,
            yaw: 0.0,
        }
    };
    let target_pose = place(l.start_ahead - 0.15, l.lateral + 0.1);
    let distractor_pose = place(l.start_ahead + 0.12, l.lateral - 0.25);
    let objects = vec![
        ObjectInstance {
            id: "obj_0".into(),
            category: l.object_category.into(),
            template_id: format!("{}_000", l.object_category),
            footprint_radius: 0.03,
            height: 0.1,
            pose: target_pose,
            support: Support::OnReceptacle("rec_0".into()),
            instance_split: InstanceSplit::SeenInstance,
        },
        ObjectInstance {
            id: "obj_1".into(),
            category: "vase".into(),
            template_id: "vase_000".into(),
            footprint_radius: 0.035,
            height: 0.15,
            pose: distractor_pose,
            support: Support::OnReceptacle("rec_0".into()),
            instance_split: InstanceSplit::SeenInstance,
        },
    ];
    let object_placements = objects
        .iter()
        .map(|o| Placement {
            object_id: o.id.clone(),
            receptacle_id: "rec_0".into(),
            pose: o.pose,
        })
        .collect();
    let params = ViewpointParams::default();
    let viewpoints: BTreeMap<String, Vec<[f64; 2]>> = scene
        .receptacles
        .iter()
        .map(|r| (r.id.clone(), generate_viewpoints(&scene, r, &params)))
        .collect();
    let episode = Episode {
        id: format!("trivial_{index}"),
        scene_id: scene.id.clone(),
        seed: 1000 + index as u64,
        split: EpisodeSplit::Train,
        objects,
        object_placements,
        target_object_ids: vec!["obj_0".into()],
        object_category: l.object_category.into(),
        start_receptacle_category: l.start_category.into(),
        goal_receptacle_category: l.goal_category.into(),
        robot_start: [robot.x, robot.y, robot.yaw],
        viewpoints,
        placement_warning: None,
    };
    (scene, episode)
}

/// All fixtures of the trivial suite.
pub fn trivial_suite() -> Vec<(Scene, Episode)> {
    (0..TRIVIAL_SUITE_LEN).map(trivial_fixture).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_valid() {
        for (scene, ep) in trivial_suite() {
            ep.validate(&scene, 0.0).unwrap();
            assert!(scene.is_navigable(ep.robot_start[0], ep.robot_start[1]));
            assert!(!ep.target_viewpoints().is_empty());
            assert!(!ep.goal_viewpoints(&scene).is_empty());
        }
    }
}
