//! Property tests for invariants that hold across modules.

use std::collections::VecDeque;

use proptest::prelude::*;

use ovmm::eval::{
    aggregate, partial_success, reward_find_x, reward_gaze, reward_place, EpisodeResult, GazeEvent, PlaceEvents,
    RewardParams, RewardState, StageOutcome,
};
use ovmm::grid::{BitGrid, Cell, GridFrame};
use ovmm::manip::{estimate_placement_point, score_grasps, GraspParams, GripperGeometry, PlacementParams, PointCloud};
use ovmm::nav::{fmm_distance_field, fmm_distance_field_until};
use ovmm::protocol::{decode_f32le, decode_u16le, encode_f32le, encode_u16le};

fn grid_strategy() -> impl Strategy<Value = (usize, Vec<bool>, usize)> {
    (4usize..20).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec(prop::bool::weighted(0.75), n * n),
            0..n * n,
        )
    })
}

fn hops_from(free: &[bool], n: usize, goal: usize) -> Vec<Option<u32>> {
    let mut hops = vec![None; n * n];
    hops[goal] = Some(0);
    let mut q = VecDeque::from([goal]);
    while let Some(i) = q.pop_front() {
        let d = hops[i].unwrap();
        let (r, c) = (i / n, i % n);
        let mut next = Vec::new();
        if r > 0 {
            next.push(i - n);
        }
        if r + 1 < n {
            next.push(i + n);
        }
        if c > 0 {
            next.push(i - 1);
        }
        if c + 1 < n {
            next.push(i + 1);
        }
        for j in next {
            if free[j] && hops[j].is_none() {
                hops[j] = Some(d + 1);
                q.push_back(j);
            }
        }
    }
    hops
}

fn outcome_from_depth(depth: usize) -> StageOutcome {
    StageOutcome {
        find_obj: depth > 0,
        pick: depth > 1,
        find_rec: depth > 2,
        place: depth > 3,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fmm_is_bracketed_by_euclid_and_grid_hops((n, mut free, goal) in grid_strategy()) {
        free[goal] = true;
        let h = 0.05;
        let grid = BitGrid::from_vec(n, n, free.clone());
        let field = fmm_distance_field(&grid, &[Cell::new(goal / n, goal % n)], GridFrame { x0: 0.0, y0: 0.0, h }).unwrap();
        let hops = hops_from(&free, n, goal);
        for (i, hop) in hops.iter().enumerate() {
            let d = field.values.data()[i];
            match *hop {
                None => prop_assert!(d.is_infinite()),
                Some(k) => {
                    let euclid = h * ((i / n) as f64 - (goal / n) as f64).hypot((i % n) as f64 - (goal % n) as f64);
                    prop_assert!(euclid <= d + 1e-9 && d <= h * k as f64 + 1e-9, "cell {i}: {euclid} <= {d} <= {}", h * k as f64);
                }
            }
        }
    }

    #[test]
    fn early_terminated_fmm_is_exact_below_its_limit((n, mut free, goal) in grid_strategy(), probe in 0usize..400, margin in 0.0f64..0.5) {
        free[goal] = true;
        let probe = probe % (n * n);
        let grid = BitGrid::from_vec(n, n, free);
        let frame = GridFrame { x0: 0.0, y0: 0.0, h: 0.05 };
        let goals = [Cell::new(goal / n, goal % n)];
        let full = fmm_distance_field(&grid, &goals, frame).unwrap();
        let part = fmm_distance_field_until(&grid, &goals, frame, Cell::new(probe / n, probe % n), margin).unwrap();
        let limit = full.values.data()[probe] + margin;
        for (a, b) in full.values.data().iter().zip(part.values.data()) {
            if *a <= limit {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn grasp_argmax_is_translation_equivariant(
        half in 0.01f64..0.03, dx in -20i64..20, dy in -20i64..20, z in 0.3f64..0.9,
    ) {
        let v = 0.005;
        let top = |ox: f64, oy: f64| {
            let k = (2.0 * half / v).round() as i64;
            let mut pts = Vec::new();
            for i in 0..k {
                for j in 0..k {
                    pts.push([ox + (i as f64 + 0.5) * v, oy + (j as f64 + 0.5) * v, z]);
                }
            }
            PointCloud::new(pts)
        };
        let params = GraspParams::default();
        let g = GripperGeometry::default();
        let a = score_grasps(&top(0.4, 0.0), &g, &params).unwrap();
        let b = score_grasps(&top(0.4 + dx as f64 * v, dy as f64 * v), &g, &params).unwrap();
        prop_assert_eq!(a.len(), b.len());
        if let (Some(a), Some(b)) = (a.first(), b.first()) {
            prop_assert_eq!((a.voxel.0 + dx, a.voxel.1 + dy), b.voxel);
            prop_assert!((a.score - b.score).abs() < 1e-12);
            prop_assert!(a.score >= params.threshold && a.score <= 1.0);
        }
    }

    #[test]
    fn placement_point_is_a_cloud_point(
        pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.0f64..1.0), 1..120), seed in any::<u64>(),
    ) {
        let points: Vec<[f64; 3]> = pts.iter().map(|p| [p.0, p.1, p.2]).collect();
        let cloud = PointCloud::new(points.clone());
        let params = PlacementParams::default();
        let p = estimate_placement_point(&cloud, &params, seed).unwrap();
        prop_assert!(points.contains(&p));
        prop_assert_eq!(p, estimate_placement_point(&cloud, &params, seed).unwrap());
    }

    #[test]
    fn batch_rates_respect_the_stage_chain(depths in proptest::collection::vec(0usize..5, 1..60)) {
        let results: Vec<EpisodeResult> = depths
            .iter()
            .enumerate()
            .map(|(i, &d)| EpisodeResult::from_outcome(&format!("e{i}"), outcome_from_depth(d), 10).unwrap())
            .collect();
        let t = aggregate("p", &results).unwrap();
        prop_assert!(t.find_obj >= t.pick && t.pick >= t.find_rec && t.find_rec >= t.overall);
        prop_assert!(t.partial >= t.overall);
        for r in &results {
            prop_assert_eq!(r.overall, r.outcome.flags().iter().all(|b| *b));
            prop_assert_eq!(r.partial, r.outcome.flags().iter().filter(|b| **b).count() as f64 / 4.0);
        }
    }

    #[test]
    fn chain_violations_are_rejected(flags in proptest::array::uniform4(any::<bool>())) {
        let o = StageOutcome { find_obj: flags[0], pick: flags[1], find_rec: flags[2], place: flags[3], ..Default::default() };
        let valid = (1..4).all(|k| !flags[k] || flags[k - 1]);
        prop_assert_eq!(partial_success(&o).is_ok(), valid);
    }

    #[test]
    fn find_reward_telescopes_over_a_reversed_path(ds in proptest::collection::vec(0.0f64..10.0, 2..30), theta in 0.0f64..std::f64::consts::PI) {
        let p = RewardParams::default();
        let states: Vec<RewardState> = ds.iter().map(|&d| RewardState { d, theta, did_collide: false }).collect();
        let total = |s: &[RewardState]| s.windows(2).map(|w| reward_find_x(&w[0], &w[1], &p).unwrap()).sum::<f64>();
        let mut rev = states.clone();
        rev.reverse();
        let slack = 2.0 * (states.len() - 1) as f64 * p.slack;
        prop_assert!((total(&states) + total(&rev) - slack).abs() < 1e-9);
    }

    #[test]
    fn rewards_are_pure(
        d0 in 0.0f64..5.0, d1 in 0.0f64..5.0, t0 in 0.0f64..std::f64::consts::PI, t1 in 0.0f64..std::f64::consts::PI, hit in any::<bool>(),
        success in any::<bool>(), released in proptest::option::of(any::<bool>()), contact in any::<bool>(),
    ) {
        let p = RewardParams::default();
        let a = RewardState { d: d0, theta: t0, did_collide: false };
        let b = RewardState { d: d1, theta: t1, did_collide: hit };
        let ev = GazeEvent { success, wrong_object: false };
        let pe = PlaceEvents { released, in_contact: contact };
        prop_assert_eq!(reward_find_x(&a, &b, &p).unwrap().to_bits(), reward_find_x(&a, &b, &p).unwrap().to_bits());
        prop_assert_eq!(reward_gaze(&a, &b, &p, ev).to_bits(), reward_gaze(&a, &b, &p, ev).to_bits());
        prop_assert_eq!(reward_place(&pe, &p).to_bits(), reward_place(&pe, &p).to_bits());
    }

    #[test]
    fn payload_codecs_are_bit_exact(bits in proptest::collection::vec(any::<u32>(), 0..300), ids in proptest::collection::vec(any::<u16>(), 0..300)) {
        let floats: Vec<f32> = bits.iter().map(|b| f32::from_bits(*b)).collect();
        let back = decode_f32le(&encode_f32le(&floats), floats.len()).unwrap();
        prop_assert_eq!(back.iter().map(|f| f.to_bits()).collect::<Vec<_>>(), bits);
        prop_assert_eq!(decode_u16le(&encode_u16le(&ids), ids.len()).unwrap(), ids.clone());
        if !ids.is_empty() {
            prop_assert!(decode_u16le(&encode_u16le(&ids), ids.len() + 1).is_err());
        }
    }
}
