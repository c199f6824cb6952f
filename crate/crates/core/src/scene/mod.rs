//! World representation, category catalog with seen/unseen splits, procedural
//! scene generation and episode generation.

mod catalog;
mod episode;
pub mod fixtures;
mod generate;
mod viewpoints;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Rect;
use crate::grid::{rle, BitGrid};

pub use catalog::{
    assign_splits, receptacle_category_names, synthetic_catalog, Catalog, ObjectTemplate, SplitAssignment, SplitCounts,
    RECEPTACLE_CATEGORIES,
};
pub use episode::{generate_episode, object_count_bounds, sample_object_placements, EpisodeGenParams, PlacementResult};
pub use generate::{build_nav_grid, generate_scene, rasterize_occupancy, SceneGenParams};
pub use viewpoints::{generate_viewpoints, ViewpointParams};

/// Height of every wall box in meters.
pub const WALL_HEIGHT: f64 = 2.5;
/// Minimum usable top-surface area for a receptacle, in square meters.
pub const MIN_SURFACE_AREA: f64 = 0.04;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unsatisfiable: {0}")]
    Unsatisfiable(String),
    #[error("no navigable cell")]
    NoNavigableCell,
    #[error("{0}")]
    Infeasible(String),
    #[error("malformed scene data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryKind {
    Object,
    Receptacle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategorySplit {
    SeenCategory,
    UnseenCategory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSplit {
    SeenInstance,
    UnseenInstance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub kind: CategoryKind,
    /// Only object categories carry a split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<CategorySplit>,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "receptacle_id")]
pub enum Support {
    OnReceptacle(String),
    Held,
    OnFloor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: String,
    pub category: String,
    /// Template (asset) this instance was drawn from.
    pub template_id: String,
    pub footprint_radius: f64,
    pub height: f64,
    pub pose: ObjectPose,
    pub support: Support,
    pub instance_split: InstanceSplit,
}

impl ObjectInstance {
    /// Square footprint of half-side `footprint_radius` around the pose.
    pub fn footprint(&self) -> Rect {
        Rect::centered(self.pose.x, self.pose.y, self.footprint_radius, self.footprint_radius)
    }

    /// Center of the object's bounding box.
    pub fn center(&self) -> [f64; 3] {
        [self.pose.x, self.pose.y, self.pose.z + self.height / 2.0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Receptacle {
    pub id: String,
    pub category: String,
    pub footprint: Rect,
    pub surface_height: f64,
    pub surface: Rect,
    pub room_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: String,
    pub rect: Rect,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub thickness: f64,
}

impl WallSegment {
    /// Axis-aligned box covered by an axis-aligned wall segment.
    pub fn rect(&self) -> Rect {
        let t = self.thickness / 2.0;
        Rect::new(
            self.a[0].min(self.b[0]) - if self.a[0] == self.b[0] { t } else { 0.0 },
            self.a[1].min(self.b[1]) - if self.a[1] == self.b[1] { t } else { 0.0 },
            self.a[0].max(self.b[0]) + if self.a[0] == self.b[0] { t } else { 0.0 },
            self.a[1].max(self.b[1]) + if self.a[1] == self.b[1] { t } else { 0.0 },
        )
    }
}

/// A generated apartment. Grids are anchored at the world origin with
/// `CELL_SIZE` cells; `occupancy` is true where geometry blocks the floor and
/// `nav_grid` is true where the robot's center may be.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub seed: u64,
    pub bounds: Rect,
    pub rooms: Vec<Room>,
    pub wall_segments: Vec<WallSegment>,
    pub receptacles: Vec<Receptacle>,
    pub robot_radius: f64,
    #[serde(with = "rle")]
    pub occupancy_grid: BitGrid,
    #[serde(with = "rle")]
    pub nav_grid: BitGrid,
    pub catalog: Vec<Category>,
}

impl Scene {
    pub fn receptacle(&self, id: &str) -> Option<&Receptacle> {
        self.receptacles.iter().find(|r| r.id == id)
    }

    /// Semantic instance id of a receptacle (receptacles come first, from 1).
    pub fn receptacle_instance_id(&self, id: &str) -> Option<u16> {
        self.receptacles.iter().position(|r| r.id == id).map(|i| (i + 1) as u16)
    }

    pub fn is_navigable(&self, x: f64, y: f64) -> bool {
        let (r, c) = crate::geometry::world_to_cell(x, y);
        self.nav_grid.checked(r, c).is_some_and(|cell| *self.nav_grid.get(cell))
    }

    pub fn to_json(&self) -> Result<String, SceneError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, SceneError> {
        let scene: Scene = serde_json::from_str(s)?;
        if scene.occupancy_grid.rows() != scene.nav_grid.rows() || scene.occupancy_grid.cols() != scene.nav_grid.cols()
        {
            return Err(SceneError::Malformed("grid shapes differ".into()));
        }
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeSplit {
    Train,
    ValScUi,
    ValUcUi,
}

impl EpisodeSplit {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "val-scui" | "val_sc_ui" => Some(Self::ValScUi),
            "val-ucui" | "val_uc_ui" => Some(Self::ValUcUi),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::ValScUi => "val-scui",
            Self::ValUcUi => "val-ucui",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub position: [f64; 2],
}

/// Object placement record: which receptacle supports which object and where.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub object_id: String,
    pub receptacle_id: String,
    pub pose: ObjectPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub scene_id: String,
    pub seed: u64,
    pub split: EpisodeSplit,
    /// All objects in the episode, in instance-id order.
    pub objects: Vec<ObjectInstance>,
    pub object_placements: Vec<Placement>,
    pub target_object_ids: Vec<String>,
    pub object_category: String,
    pub start_receptacle_category: String,
    pub goal_receptacle_category: String,
    pub robot_start: [f64; 3],
    /// Viewpoints per receptacle id, for every receptacle of the start and goal
    /// categories.
    pub viewpoints: BTreeMap<String, Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement_warning: Option<String>,
}

impl Episode {
    pub fn object(&self, id: &str) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Viewpoints of the receptacles supporting the target objects.
    pub fn target_viewpoints(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::new();
        for p in &self.object_placements {
            if self.target_object_ids.contains(&p.object_id) {
                if let Some(vps) = self.viewpoints.get(&p.receptacle_id) {
                    out.extend_from_slice(vps);
                }
            }
        }
        out
    }

    /// Ids of receptacles of the goal category.
    pub fn goal_receptacle_ids(&self, scene: &Scene) -> Vec<String> {
        scene
            .receptacles
            .iter()
            .filter(|r| r.category == self.goal_receptacle_category)
            .map(|r| r.id.clone())
            .collect()
    }

    /// Viewpoints of every goal-category receptacle.
    pub fn goal_viewpoints(&self, scene: &Scene) -> Vec<[f64; 2]> {
        self.goal_receptacle_ids(scene)
            .iter()
            .filter_map(|id| self.viewpoints.get(id))
            .flatten()
            .copied()
            .collect()
    }

    /// Checks the structural invariants against the scene. `min_start_distance`
    /// is the required geodesic clearance between the start and target viewpoints.
    pub fn validate(&self, scene: &Scene, min_start_distance: f64) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Malformed(m));
        if self.target_object_ids.is_empty() {
            return bad("no target objects".into());
        }
        for tid in &self.target_object_ids {
            let Some(obj) = self.object(tid) else {
                return bad(format!("unknown target {tid}"));
            };
            let Support::OnReceptacle(rid) = &obj.support else {
                return bad(format!("target {tid} is not on a receptacle"));
            };
            let Some(rec) = scene.receptacle(rid) else {
                return bad(format!("unknown receptacle {rid}"));
            };
            if rec.category != self.start_receptacle_category {
                return bad(format!("target {tid} is not on a start receptacle"));
            }
            if self.viewpoints.get(rid).is_none_or(|v| v.is_empty()) {
                return bad(format!("target receptacle {rid} has no viewpoints"));
            }
        }
        for obj in &self.objects {
            if let Support::OnReceptacle(rid) = &obj.support {
                let Some(rec) = scene.receptacle(rid) else {
                    return bad(format!("unknown receptacle {rid}"));
                };
                if !rec.surface.contains_rect(&obj.footprint()) || (obj.pose.z - rec.surface_height).abs() > 1e-9 {
                    return bad(format!("object {} is not supported by {rid}", obj.id));
                }
            }
        }
        if self.goal_viewpoints(scene).is_empty() {
            return bad("no reachable goal receptacle".into());
        }
        let [sx, sy, _] = self.robot_start;
        if !scene.is_navigable(sx, sy) {
            return bad("robot start is not navigable".into());
        }
        if min_start_distance > 0.0 {
            let sources: Vec<_> = self
                .target_viewpoints()
                .iter()
                .filter_map(|p| {
                    let (r, c) = crate::geometry::world_to_cell(p[0], p[1]);
                    scene.nav_grid.checked(r, c)
                })
                .collect();
            let hops = scene.nav_grid.bfs_hops(&sources);
            let (r, c) = crate::geometry::world_to_cell(sx, sy);
            let start = scene.nav_grid.checked(r, c).expect("checked above");
            let d = *hops.get(start);
            if d != u32::MAX && (d as f64) * crate::grid::CELL_SIZE < min_start_distance - 1e-9 {
                return bad("robot start too close to a target viewpoint".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, SceneError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
