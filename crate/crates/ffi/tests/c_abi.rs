use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use ovmm_ffi::*;

fn last_error() -> String {
    let p = ovmm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn fixture_sim_lifecycle() {
    unsafe {
        let mut sim: *mut OvmmSim = ptr::null_mut();
        assert_eq!(ovmm_sim_new_fixture(0, 7, false, &mut sim), OvmmStatus::Ok);
        assert!(!sim.is_null());

        let (mut w, mut h) = (0usize, 0usize);
        assert_eq!(ovmm_sim_image_size(sim, &mut w, &mut h), OvmmStatus::Ok);
        assert!(w > 0 && h > 0);

        let n = w * h;
        let mut depth = vec![0f32; n];
        let mut sem = vec![0u16; n];
        let mut pose = [1.0f64; 3];
        assert_eq!(
            ovmm_sim_observe(sim, depth.as_mut_ptr(), sem.as_mut_ptr(), n, pose.as_mut_ptr()),
            OvmmStatus::Ok
        );
        assert_eq!(pose, [0.0, 0.0, 0.0]);
        assert!(depth.iter().any(|&d| d > 0.0));

        let st = ovmm_sim_observe(sim, depth.as_mut_ptr(), ptr::null_mut(), n - 1, ptr::null_mut());
        assert_eq!(st, OvmmStatus::BufferTooSmall);
        assert!(last_error().contains("pixels"));

        let mut info = OvmmStepInfo::default();
        let fwd = CString::new(r#"{"type":"waypoint","dx":0.1,"dy":0.0,"dyaw":0.0}"#).unwrap();
        assert_eq!(ovmm_sim_step_json(sim, fwd.as_ptr(), &mut info), OvmmStatus::Ok);
        assert!(!info.stop && !info.holding);
        assert_eq!(
            ovmm_sim_observe(sim, ptr::null_mut(), ptr::null_mut(), 0, pose.as_mut_ptr()),
            OvmmStatus::Ok
        );
        assert!((pose[0] - 0.1).abs() < 1e-9, "{pose:?}");

        // Arm actions in navigation mode are consumed as invalid no-ops.
        let grasp = CString::new(r#"{"type":"release"}"#).unwrap();
        assert_eq!(ovmm_sim_step_json(sim, grasp.as_ptr(), &mut info), OvmmStatus::Ok);
        assert!(info.invalid_action);

        let bad = CString::new("{not json").unwrap();
        assert_eq!(ovmm_sim_step_json(sim, bad.as_ptr(), &mut info), OvmmStatus::Parse);

        let stop = CString::new(r#"{"type":"discrete","action":"stop"}"#).unwrap();
        assert_eq!(ovmm_sim_step_json(sim, stop.as_ptr(), &mut info), OvmmStatus::Ok);
        assert!(info.stop);
        ovmm_sim_free(sim);
        ovmm_sim_free(ptr::null_mut());
    }
}

#[test]
fn labels_round_trip_through_caller_buffer() {
    unsafe {
        let mut sim: *mut OvmmSim = ptr::null_mut();
        assert_eq!(ovmm_sim_new_fixture(1, 0, false, &mut sim), OvmmStatus::Ok);
        let mut buf = [0 as std::ffi::c_char; 64];
        assert_eq!(
            ovmm_sim_label(sim, 1, buf.as_mut_ptr(), buf.len()),
            OvmmStatus::NoObservation
        );
        let (mut w, mut h) = (0, 0);
        ovmm_sim_image_size(sim, &mut w, &mut h);
        let mut sem = vec![0u16; w * h];
        assert_eq!(
            ovmm_sim_observe(sim, ptr::null_mut(), sem.as_mut_ptr(), w * h, ptr::null_mut()),
            OvmmStatus::Ok
        );
        if let Some(&id) = sem.iter().find(|&&v| v != 0) {
            assert_eq!(ovmm_sim_label(sim, id, buf.as_mut_ptr(), buf.len()), OvmmStatus::Ok);
            assert!(!CStr::from_ptr(buf.as_ptr()).to_bytes().is_empty());
            assert_eq!(ovmm_sim_label(sim, id, buf.as_mut_ptr(), 1), OvmmStatus::BufferTooSmall);
        }
        assert_eq!(
            ovmm_sim_label(sim, u16::MAX, buf.as_mut_ptr(), buf.len()),
            OvmmStatus::Ok
        );
        assert_eq!(buf[0], 0);
        ovmm_sim_free(sim);
    }
}

#[test]
fn json_constructor_validates_inputs() {
    let (scene, episode) = ovmm::scene::fixtures::trivial_fixture(2);
    let s = CString::new(scene.to_json().unwrap()).unwrap();
    let e = CString::new(episode.to_json().unwrap()).unwrap();
    unsafe {
        let mut sim: *mut OvmmSim = ptr::null_mut();
        assert_eq!(
            ovmm_sim_new_json(s.as_ptr(), e.as_ptr(), 3, true, &mut sim),
            OvmmStatus::Ok
        );
        ovmm_sim_free(sim);

        let bad = CString::new("[]").unwrap();
        assert_eq!(
            ovmm_sim_new_json(bad.as_ptr(), e.as_ptr(), 3, true, &mut sim),
            OvmmStatus::Parse
        );
        assert_eq!(
            ovmm_sim_new_json(ptr::null(), e.as_ptr(), 3, true, &mut sim),
            OvmmStatus::NullPointer
        );
        assert_eq!(
            ovmm_sim_new_json(s.as_ptr(), e.as_ptr(), 3, true, ptr::null_mut()),
            OvmmStatus::NullPointer
        );

        let (_, other) = ovmm::scene::fixtures::trivial_fixture(3);
        let o = CString::new(other.to_json().unwrap()).unwrap();
        if other.scene_id != scene.id {
            assert_eq!(
                ovmm_sim_new_json(s.as_ptr(), o.as_ptr(), 3, true, &mut sim),
                OvmmStatus::InvalidArgument
            );
        }
    }
}

#[test]
fn fixture_episode_runs_to_success() {
    assert!(ovmm_fixture_count() >= 5);
    let mut out = OvmmEpisodeSummary::default();
    unsafe {
        assert_eq!(ovmm_run_fixture(0, 1, false, &mut out), OvmmStatus::Ok);
        assert_eq!(
            ovmm_run_fixture(ovmm_fixture_count(), 1, false, &mut out),
            OvmmStatus::InvalidArgument
        );
        assert_eq!(ovmm_run_fixture(0, 1, false, ptr::null_mut()), OvmmStatus::NullPointer);
    }
    assert!(out.find_obj && out.pick && out.find_rec && out.place);
    assert_eq!(out.partial, 1.0);
    assert!(out.total_steps > 0 && out.total_steps < 300);
}

#[test]
fn distance_field_on_corridor() {
    // 3x5 grid with a wall in column 2 except the bottom row.
    let rows = 3;
    let cols = 5;
    let mut trav = vec![1u8; rows * cols];
    trav[2] = 0;
    trav[cols + 2] = 0;
    let mut out = vec![0f64; rows * cols];
    unsafe {
        assert_eq!(
            ovmm_fmm_distance(trav.as_ptr(), rows, cols, 0, 0, 1.0, out.as_mut_ptr()),
            OvmmStatus::Ok
        );
    }
    assert_eq!(out[0], 0.0);
    assert!((out[1] - 1.0).abs() < 1e-9);
    assert!(out[2].is_infinite());
    // Reaching (0,4) requires going around the wall, so it is farther than 4.
    assert!(out[4] > 4.0 && out[4].is_finite());
    unsafe {
        let st = ovmm_fmm_distance(trav.as_ptr(), rows, cols, 9, 0, 1.0, out.as_mut_ptr());
        assert_eq!(st, OvmmStatus::InvalidArgument);
        let st = ovmm_fmm_distance(trav.as_ptr(), rows, cols, 0, 0, 0.0, out.as_mut_ptr());
        assert_eq!(st, OvmmStatus::InvalidArgument);
        let st = ovmm_fmm_distance(ptr::null(), rows, cols, 0, 0, 1.0, out.as_mut_ptr());
        assert_eq!(st, OvmmStatus::NullPointer);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/ovmm.h");
    let text = std::fs::read_to_string(header).expect("header generated by build script");
    for sym in [
        "ovmm_sim_new_fixture",
        "ovmm_sim_step_json",
        "ovmm_fmm_distance",
        "OVMM_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ OvmmSim *s = 0; OvmmStatus st = ovmm_sim_new_fixture(0, 0, false, &s); \
             return st == OVMM_STATUS_OK ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    let status = match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .status()
    {
        Ok(s) => s,
        Err(_) => return eprintln!("no C compiler found; skipping header compile check"),
    };
    assert!(status.success(), "header failed to compile as C99");
}
