//! Object placement sampling and episode generation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{Catalog, ObjectTemplate, SplitAssignment};
use super::viewpoints::{generate_viewpoints, ViewpointParams};
use super::{Episode, EpisodeSplit, ObjectInstance, ObjectPose, Placement, Receptacle, Scene, SceneError, Support};
use crate::geometry::{cell_center, world_to_cell, Rect};
use crate::grid::CELL_SIZE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeGenParams {
    pub viewpoints: ViewpointParams,
    /// Required geodesic distance between the robot start and every target
    /// viewpoint.
    pub min_start_distance: f64,
    pub max_targets: usize,
    /// Rejection-sampling tries per object.
    pub placement_attempts: usize,
    /// Optional fixed receptacle categories; chosen at random when unset.
    pub start_receptacle_category: Option<String>,
    pub goal_receptacle_category: Option<String>,
}

impl Default for EpisodeGenParams {
    fn default() -> Self {
        Self {
            viewpoints: ViewpointParams::default(),
            min_start_distance: 3.0,
            max_targets: 2,
            placement_attempts: 100,
            start_receptacle_category: None,
            goal_receptacle_category: None,
        }
    }
}

/// `[round_half_up(1.5 A), round_half_up(2 A)]`, each at least 1.
pub fn object_count_bounds(surface_area: f64) -> (usize, usize) {
    let round = |v: f64| ((v + 0.5).floor() as usize).max(1);
    (round(1.5 * surface_area), round(2.0 * surface_area))
}

/// True when a square object of half-side `r` centered at `(x, y)` lies inside
/// `surface` and is disjoint from every placed square on the same surface.
pub(crate) fn fits(surface: &Rect, placed: &[(f64, f64, f64)], x: f64, y: f64, r: f64) -> bool {
    if !surface.contains_rect(&Rect::centered(x, y, r, r)) {
        return false;
    }
    placed
        .iter()
        .all(|&(px, py, pr)| (px - x).abs() >= pr + r || (py - y).abs() >= pr + r)
}

/// Placement sampler state: what sits on each receptacle so far.
struct Placer<'a> {
    receptacles: Vec<&'a Receptacle>,
    placed: BTreeMap<String, Vec<(f64, f64, f64)>>,
    attempts: usize,
}

impl<'a> Placer<'a> {
    fn new(receptacles: Vec<&'a Receptacle>, attempts: usize) -> Self {
        Self {
            receptacles,
            placed: BTreeMap::new(),
            attempts,
        }
    }

    /// Samples a receptacle (area-weighted) among `allowed` and a pose on it.
    fn place(
        &mut self,
        rng: &mut ChaCha8Rng,
        template: &ObjectTemplate,
        allowed: &dyn Fn(&Receptacle) -> bool,
    ) -> Option<(String, ObjectPose)> {
        let candidates: Vec<&Receptacle> = self.receptacles.iter().copied().filter(|r| allowed(r)).collect();
        if candidates.is_empty() {
            return None;
        }
        let total: f64 = candidates.iter().map(|r| r.surface.area()).sum();
        let r = template.footprint_radius;
        for _ in 0..self.attempts {
            let mut pick = rng.gen_range(0.0..total);
            let mut rec = candidates[candidates.len() - 1];
            for c in &candidates {
                if pick < c.surface.area() {
                    rec = c;
                    break;
                }
                pick -= c.surface.area();
            }
            let s = rec.surface.inset(r);
            if s.width() < 0.0 || s.height() < 0.0 {
                continue;
            }
            let x = s.x0 + rng.gen::<f64>() * s.width();
            let y = s.y0 + rng.gen::<f64>() * s.height();
            let placed = self.placed.entry(rec.id.clone()).or_default();
            if fits(&rec.surface, placed, x, y, r) {
                placed.push((x, y, r));
                let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                return Some((
                    rec.id.clone(),
                    ObjectPose {
                        x,
                        y,
                        z: rec.surface_height,
                        yaw,
                    },
                ));
            }
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlacementResult {
    /// Requested object count.
    pub requested: usize,
    pub placements: Vec<(ObjectTemplate, String, ObjectPose)>,
    pub warning: Option<String>,
}

/// Draws `N ~ U[object_count_bounds(A)]` objects from `pool` and places them on
/// receptacles that have viewpoints.
pub fn sample_object_placements(
    scene: &Scene,
    viewpoints: &BTreeMap<String, Vec<[f64; 2]>>,
    pool: &[&ObjectTemplate],
    seed: u64,
    attempts: usize,
) -> Result<PlacementResult, SceneError> {
    if pool.is_empty() {
        return Err(SceneError::Infeasible("empty object pool".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area: f64 = scene.receptacles.iter().map(|r| r.surface.area()).sum();
    let (lo, hi) = object_count_bounds(area);
    let n = rng.gen_range(lo..=hi);
    let with_vp = |r: &Receptacle| viewpoints.get(&r.id).is_some_and(|v| !v.is_empty());
    let mut placer = Placer::new(scene.receptacles.iter().collect(), attempts);
    let mut placements = Vec::with_capacity(n);
    let mut warning = None;
    for k in 0..n {
        let t = pool[rng.gen_range(0..pool.len())];
        match placer.place(&mut rng, t, &with_vp) {
            Some((rid, pose)) => placements.push((t.clone(), rid, pose)),
            None => {
                warning = Some(format!("placed {k} of {n} objects"));
                break;
            }
        }
    }
    Ok(PlacementResult {
        requested: n,
        placements,
        warning,
    })
}

fn infeasible(m: &str) -> SceneError {
    SceneError::Infeasible(m.to_string())
}

/// Generates one episode for `phase` in `scene`.
pub fn generate_episode(
    scene: &Scene,
    catalog: &Catalog,
    splits: &SplitAssignment,
    phase: EpisodeSplit,
    seed: u64,
    params: &EpisodeGenParams,
) -> Result<Episode, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all_vps: BTreeMap<String, Vec<[f64; 2]>> = scene
        .receptacles
        .iter()
        .map(|r| (r.id.clone(), generate_viewpoints(scene, r, &params.viewpoints)))
        .collect();
    let has_vp = |r: &Receptacle| all_vps.get(&r.id).is_some_and(|v| !v.is_empty());

    let pool = splits.pool(catalog, phase);
    if pool.is_empty() {
        return Err(infeasible("empty object pool for phase"));
    }

    let reachable_cats: Vec<String> = scene
        .receptacles
        .iter()
        .filter(|r| has_vp(r))
        .map(|r| r.category.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let present_cats: BTreeSet<&str> = scene.receptacles.iter().map(|r| r.category.as_str()).collect();

    let start_cat = match &params.start_receptacle_category {
        Some(c) if reachable_cats.contains(c) => c.clone(),
        Some(_) => return Err(infeasible("no reachable start receptacle")),
        None => reachable_cats
            .choose(&mut rng)
            .cloned()
            .ok_or_else(|| infeasible("no reachable start receptacle"))?,
    };
    let goal_cat = match &params.goal_receptacle_category {
        Some(c) if *c == start_cat => return Err(infeasible("goal category equals start category")),
        Some(c) if reachable_cats.contains(c) => c.clone(),
        Some(_) => return Err(infeasible("no reachable goal receptacle")),
        None => {
            let others: Vec<&String> = reachable_cats.iter().filter(|c| **c != start_cat).collect();
            match others.choose(&mut rng) {
                Some(c) => (*c).clone(),
                None if present_cats.iter().any(|c| *c != start_cat) => {
                    return Err(infeasible("no reachable goal receptacle"))
                }
                None => return Err(infeasible("no goal receptacle category distinct from start")),
            }
        }
    };

    let pool_cats: Vec<&str> = pool
        .iter()
        .map(|t| t.category.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let object_cat = pool_cats.choose(&mut rng).expect("pool nonempty").to_string();
    let cat_pool: Vec<&ObjectTemplate> = pool.iter().copied().filter(|t| t.category == object_cat).collect();
    let n_targets = rng.gen_range(1..=params.max_targets.max(1));

    let mut placer = Placer::new(scene.receptacles.iter().collect(), params.placement_attempts);
    let mut placed: Vec<(ObjectTemplate, String, ObjectPose)> = Vec::new();
    let on_start = |r: &Receptacle| r.category == start_cat && has_vp(r);
    for _ in 0..n_targets {
        let t = cat_pool[rng.gen_range(0..cat_pool.len())];
        let (rid, pose) = placer
            .place(&mut rng, t, &on_start)
            .ok_or_else(|| infeasible("cannot place target on a start receptacle"))?;
        placed.push((t.clone(), rid, pose));
    }

    let area: f64 = scene.receptacles.iter().map(|r| r.surface.area()).sum();
    let (lo, hi) = object_count_bounds(area);
    let n_total = rng.gen_range(lo..=hi).max(n_targets);
    let distractors: Vec<&ObjectTemplate> = catalog.templates.iter().filter(|t| t.category != object_cat).collect();
    let mut warning = None;
    let anywhere = |r: &Receptacle| has_vp(r);
    for k in n_targets..n_total {
        if distractors.is_empty() {
            break;
        }
        let t = distractors[rng.gen_range(0..distractors.len())];
        match placer.place(&mut rng, t, &anywhere) {
            Some((rid, pose)) => placed.push((t.clone(), rid, pose)),
            None => {
                warning = Some(format!("placed {k} of {n_total} objects"));
                break;
            }
        }
    }

    let objects: Vec<ObjectInstance> = placed
        .iter()
        .enumerate()
        .map(|(i, (t, rid, pose))| ObjectInstance {
            id: format!("obj_{i}"),
            category: t.category.clone(),
            template_id: t.id.clone(),
            footprint_radius: t.footprint_radius,
            height: t.height,
            pose: *pose,
            support: Support::OnReceptacle(rid.clone()),
            instance_split: splits.instance_split(&t.id),
        })
        .collect();
    let object_placements: Vec<Placement> = objects
        .iter()
        .zip(&placed)
        .map(|(o, (_, rid, pose))| Placement {
            object_id: o.id.clone(),
            receptacle_id: rid.clone(),
            pose: *pose,
        })
        .collect();
    let target_object_ids: Vec<String> = objects[..n_targets].iter().map(|o| o.id.clone()).collect();

    // robot start: geodesic (BFS on the nav grid) clearance from target viewpoints
    let target_recs: BTreeSet<&String> = placed[..n_targets].iter().map(|(_, rid, _)| rid).collect();
    let sources: Vec<_> = target_recs
        .iter()
        .flat_map(|rid| all_vps[*rid].iter())
        .filter_map(|p| {
            let (r, c) = world_to_cell(p[0], p[1]);
            scene.nav_grid.checked(r, c)
        })
        .collect();
    let hops = scene.nav_grid.bfs_hops(&sources);
    let min_hops = params.min_start_distance / CELL_SIZE;
    let starts: Vec<_> = scene
        .nav_grid
        .ones()
        .filter(|&c| {
            let h = *hops.get(c);
            h != u32::MAX && (h as f64) >= min_hops - 1e-9
        })
        .collect();
    let start = starts
        .choose(&mut rng)
        .copied()
        .ok_or_else(|| infeasible("no robot start far enough from target viewpoints"))?;
    let (sx, sy) = cell_center(start);
    let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);

    let viewpoints: BTreeMap<String, Vec<[f64; 2]>> = scene
        .receptacles
        .iter()
        .filter(|r| r.category == start_cat || r.category == goal_cat)
        .map(|r| (r.id.clone(), all_vps[&r.id].clone()))
        .collect();

    Ok(Episode {
        id: format!("ep_{seed:016x}"),
        scene_id: scene.id.clone(),
        seed,
        split: phase,
        objects,
        object_placements,
        target_object_ids,
        object_category: object_cat,
        start_receptacle_category: start_cat,
        goal_receptacle_category: goal_cat,
        robot_start: [sx, sy, yaw],
        viewpoints,
        placement_warning: warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::catalog::{assign_splits, synthetic_catalog};
    use crate::scene::generate::{generate_scene, SceneGenParams};

    #[test]
    fn count_bounds() {
        assert_eq!(object_count_bounds(10.0), (15, 20));
        assert_eq!(object_count_bounds(0.4), (1, 1));
        assert_eq!(object_count_bounds(0.0), (1, 1));
        assert_eq!(object_count_bounds(1.0), (2, 2));
        assert_eq!(object_count_bounds(0.3), (1, 1));
    }

    #[test]
    fn oversized_pair_on_small_surface() {
        let surface = Rect::new(0.0, 0.0, 0.15, 0.15);
        // full-footprint reading: a 0.2 m square does not fit at all
        assert!(!fits(&surface, &[], 0.075, 0.075, 0.1));
        // center-only reading: even with the first object accepted anywhere,
        // every second center in the surface overlaps it
        let first = (0.075, 0.075, 0.1);
        for i in 0..=15 {
            for j in 0..=15 {
                let (x, y) = (i as f64 * 0.01, j as f64 * 0.01);
                let disjoint = (x - first.0).abs() >= 0.2 || (y - first.1).abs() >= 0.2;
                assert!(!disjoint);
            }
        }
    }

    fn setup() -> (Scene, Catalog, SplitAssignment) {
        let scene = generate_scene(
            3,
            &SceneGenParams {
                rooms: 2,
                width: 10.0,
                height: 7.0,
                ..Default::default()
            },
        )
        .unwrap();
        let catalog = synthetic_catalog(30, 300, 1);
        let splits = assign_splits(&catalog, 2).unwrap();
        (scene, catalog, splits)
    }

    #[test]
    fn episodes_satisfy_invariants() {
        let (scene, catalog, splits) = setup();
        for (k, phase) in [EpisodeSplit::Train, EpisodeSplit::ValScUi, EpisodeSplit::ValUcUi]
            .into_iter()
            .enumerate()
        {
            for seed in 0..4 {
                let ep = generate_episode(
                    &scene,
                    &catalog,
                    &splits,
                    phase,
                    seed * 7 + k as u64,
                    &EpisodeGenParams::default(),
                )
                .unwrap();
                ep.validate(&scene, 3.0).unwrap();
                for tid in &ep.target_object_ids {
                    let o = ep.object(tid).unwrap();
                    let t = catalog.templates.iter().find(|t| t.id == o.template_id).unwrap();
                    assert!(splits.in_pool(t, phase));
                    if phase == EpisodeSplit::ValUcUi {
                        assert!(!splits.seen_categories.contains(&o.category));
                    }
                }
                assert_ne!(ep.start_receptacle_category, ep.goal_receptacle_category);
                let round = Episode::from_json(&ep.to_json().unwrap()).unwrap();
                assert_eq!(round, ep);
            }
        }
    }

    #[test]
    fn episode_generation_is_deterministic() {
        let (scene, catalog, splits) = setup();
        let p = EpisodeGenParams::default();
        let a = generate_episode(&scene, &catalog, &splits, EpisodeSplit::Train, 5, &p).unwrap();
        let b = generate_episode(&scene, &catalog, &splits, EpisodeSplit::Train, 5, &p).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn placements_respect_count_bounds() {
        let (scene, catalog, _) = setup();
        let vps: BTreeMap<_, _> = scene
            .receptacles
            .iter()
            .map(|r| {
                (
                    r.id.clone(),
                    generate_viewpoints(&scene, r, &ViewpointParams::default()),
                )
            })
            .collect();
        let pool: Vec<&ObjectTemplate> = catalog.templates.iter().collect();
        let area: f64 = scene.receptacles.iter().map(|r| r.surface.area()).sum();
        let (lo, hi) = object_count_bounds(area);
        for seed in 0..5 {
            let res = sample_object_placements(&scene, &vps, &pool, seed, 100).unwrap();
            assert!((lo..=hi).contains(&res.requested));
            if res.warning.is_none() {
                assert_eq!(res.placements.len(), res.requested);
            }
            let mut by_rec: BTreeMap<&str, Vec<Rect>> = BTreeMap::new();
            for (t, rid, pose) in &res.placements {
                assert!(!vps[rid].is_empty());
                let rec = scene.receptacle(rid).unwrap();
                let fp = Rect::centered(pose.x, pose.y, t.footprint_radius, t.footprint_radius);
                assert!(rec.surface.contains_rect(&fp));
                for other in by_rec.get(rid.as_str()).into_iter().flatten() {
                    assert!(!other.overlaps(&fp));
                }
                by_rec.entry(rid).or_default().push(fp);
            }
        }
    }
}
