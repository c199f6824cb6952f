use std::path::Path;
use std::process::Command;

fn ovmm(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_ovmm"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "ovmm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_run_report_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    let episodes = dir.path().join("episodes.jsonl");
    let results = dir.path().join("gt.jsonl");
    let debug = dir.path().join("debug");

    ovmm(&["gen-scenes", "--count", "2", "--seed", "5", "--out", s(&scenes)]);
    assert_eq!(std::fs::read_dir(&scenes).unwrap().count(), 2);

    let gen = [
        "gen-episodes",
        "--scenes",
        s(&scenes),
        "--per-scene",
        "2",
        "--seed",
        "5",
    ];
    ovmm(
        &[
            &gen[..],
            &["--categories", "30", "--instances", "150", "--out", s(&episodes)],
        ]
        .concat(),
    );
    let lines = std::fs::read_to_string(&episodes).unwrap();
    assert_eq!(lines.lines().count(), 4);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    let id = first["id"].as_str().unwrap().to_string();

    let run = [
        "run",
        "--scenes",
        s(&scenes),
        "--episodes",
        s(&episodes),
        "--parallelism",
        "2",
    ];
    ovmm(&[&run[..], &["--out", s(&results)]].concat());
    let rows: Vec<serde_json::Value> = std::fs::read_to_string(&results)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 4);

    let report = ovmm(&["report", "--stages", s(&results)]);
    let mut lines = report.lines();
    assert!(lines.next().unwrap().contains("Overall"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("gt"), "{row}");
    assert!(report.contains("FindRec"));

    ovmm(&[
        "dump-debug",
        "--scenes",
        s(&scenes),
        "--episodes",
        s(&episodes),
        "--episode",
        &id,
        "--out",
        s(&debug),
    ]);
    for f in [
        "object.pgm",
        "obstacles.pgm",
        "explored.pgm",
        "trace.jsonl",
        "result.json",
    ] {
        assert!(debug.join(f).is_file(), "{f} missing");
    }
    let pgm = std::fs::read(debug.join("obstacles.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5"));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_ovmm"))
        .args([
            "run",
            "--scenes",
            "/nonexistent",
            "--episodes",
            "/nonexistent.jsonl",
            "--out",
            "/tmp/x.jsonl",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
