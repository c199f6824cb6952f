//! Batch execution, external agents over the wire protocol and reporting.

use std::io::{BufReader, BufWriter, Cursor};
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use ovmm::agent::{Agent, AgentConfig, HeuristicAgent};
use ovmm::eval::{EpisodeResult, MetricProfile, StageOutcome, SummaryTable};
use ovmm::harness::{
    generate_suite, read_jsonl, report, run_batch, run_suite, save_scenes, write_jsonl, AgentSpec, HarnessError,
    RunConfig, Suite, SuiteParams,
};
use ovmm::protocol::{serve, Message, ProtocolError, ResetConfig, WireObservation};
use ovmm::scene::fixtures::{trivial_fixture, TRIVIAL_SUITE_LEN};
use ovmm::scene::{Episode, Scene};
use ovmm::sim::{NoiseProfile, Sim, SimConfig};

fn config(dir: &Path, agent: AgentSpec, parallelism: usize, name: &str) -> RunConfig {
    RunConfig {
        scenes: dir.join("scenes"),
        episodes: dir.join("episodes.jsonl"),
        agent,
        agent_config: AgentConfig::default(),
        perception: NoiseProfile::GROUND_TRUTH,
        profile: MetricProfile::sim(),
        sim: SimConfig::default(),
        global_seed: 3,
        parallelism,
        output: dir.join(name),
    }
}

fn write_suite(dir: &Path, scenes: &[Scene], episodes: &[Episode]) {
    save_scenes(&dir.join("scenes"), scenes).unwrap();
    write_jsonl(&dir.join("episodes.jsonl"), episodes).unwrap();
}

fn trivial_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let (scenes, episodes): (Vec<_>, Vec<_>) = (0..TRIVIAL_SUITE_LEN).map(trivial_fixture).unzip();
    write_suite(dir.path(), &scenes, &episodes);
    dir
}

fn results(path: &Path) -> Vec<EpisodeResult> {
    read_jsonl(path).unwrap()
}

fn proxy_command() -> String {
    format!("'{}' agent-proxy", env!("CARGO_BIN_EXE_ovmm"))
}

#[test]
fn malformed_agent_output_fails_only_that_episode() {
    let dir = trivial_dir();
    let (_, victim) = trivial_fixture(3);
    // Replays the reset line into the real proxy, except for the victim episode.
    let script = dir.path().join("agent.sh");
    std::fs::write(
        &script,
        format!(
            "read -r line\ncase \"$line\" in\n  *'\"{}\"'*) echo '{{not json'; sleep 1 ;;\n  *) {{ printf '%s\\n' \"$line\"; cat; }} | {} ;;\nesac\n",
            victim.id,
            proxy_command()
        ),
    )
    .unwrap();
    let cfg = config(
        dir.path(),
        AgentSpec::ExternalExec(format!("sh '{}'", script.display())),
        1,
        "out.jsonl",
    );
    run_batch(&cfg).unwrap();
    let got = results(&cfg.output);
    assert_eq!(got.len(), TRIVIAL_SUITE_LEN);
    for r in &got {
        if r.episode_id == victim.id {
            let reason = r.failure.as_deref().unwrap_or_default();
            assert!(reason.starts_with("protocol"), "reason {reason:?}");
            assert_eq!(r.outcome.flags(), [false; 4]);
            assert_eq!(r.partial, 0.0);
        } else {
            assert!(r.overall, "{} should be unaffected: {r:?}", r.episode_id);
        }
    }
}

#[test]
fn agent_that_exits_is_scored_failed() {
    let dir = trivial_dir();
    let cfg = config(
        dir.path(),
        AgentSpec::ExternalExec("head -n 1 > /dev/null".into()),
        1,
        "out.jsonl",
    );
    run_batch(&cfg).unwrap();
    let got = results(&cfg.output);
    assert_eq!(got.len(), TRIVIAL_SUITE_LEN);
    assert!(got.iter().all(|r| r.failure.is_some() && !r.outcome.find_obj));
}

#[test]
fn unreachable_tcp_agent_is_scored_failed_not_fatal() {
    let dir = trivial_dir();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let cfg = config(dir.path(), AgentSpec::ExternalTcp(port.to_string()), 1, "out.jsonl");
    run_batch(&cfg).unwrap();
    assert!(results(&cfg.output)
        .iter()
        .all(|r| r.failure.as_deref().is_some_and(|f| f.starts_with("agent"))));
}

#[test]
fn tcp_agent_matches_builtin() {
    let dir = trivial_dir();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            std::thread::spawn(move || {
                let reader = BufReader::new(stream.try_clone().unwrap());
                let make = || -> Box<dyn Agent> { Box::new(HeuristicAgent::new(AgentConfig::default())) };
                let _ = serve(reader, BufWriter::new(stream), make);
            });
        }
    });
    let builtin = config(dir.path(), AgentSpec::BuiltinHeuristic, 1, "builtin.jsonl");
    let tcp = config(dir.path(), AgentSpec::ExternalTcp(addr.to_string()), 1, "tcp.jsonl");
    run_batch(&builtin).unwrap();
    run_batch(&tcp).unwrap();
    assert_eq!(
        std::fs::read(&builtin.output).unwrap(),
        std::fs::read(&tcp.output).unwrap()
    );
}

fn small_generated_suite() -> Suite {
    generate_suite(&SuiteParams {
        scenes: 2,
        episodes_per_scene: 5,
        seed: 99,
        catalog_categories: 30,
        catalog_instances: 150,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn parallel_results_are_complete_and_order_independent() {
    let suite = small_generated_suite();
    assert_eq!(suite.episodes.len(), 10);
    let dir = tempfile::tempdir().unwrap();
    let serial = run_suite(&suite, &config(dir.path(), AgentSpec::BuiltinHeuristic, 1, "a")).unwrap();
    let parallel = run_suite(&suite, &config(dir.path(), AgentSpec::BuiltinHeuristic, 4, "b")).unwrap();
    assert_eq!(serial.len(), 10);
    assert_eq!(serial, parallel);
    let ids: Vec<&str> = serial.iter().map(|r| r.episode_id.as_str()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(ids, sorted);
}

#[test]
fn renaming_one_episode_changes_only_that_result() {
    let suite = small_generated_suite();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), AgentSpec::BuiltinHeuristic, 1, "a");
    cfg.perception = NoiseProfile::NOISY;
    let before = run_suite(&suite, &cfg).unwrap();
    let mut renamed = suite.clone();
    let mut ep = (*renamed.episodes[0]).clone();
    let old_id = ep.id.clone();
    ep.id = format!("{old_id}-renamed");
    renamed.episodes[0] = Arc::new(ep);
    let after = run_suite(&renamed, &cfg).unwrap();
    for r in &before {
        if r.episode_id != old_id {
            assert_eq!(Some(r), after.iter().find(|a| a.episode_id == r.episode_id));
        }
    }
    let new = after.iter().find(|a| a.episode_id.ends_with("-renamed")).unwrap();
    let old = before.iter().find(|r| r.episode_id == old_id).unwrap();
    assert_ne!(new.seed, old.seed);
}

#[test]
fn zero_parallelism_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), AgentSpec::BuiltinHeuristic, 0, "x");
    assert!(matches!(
        run_suite(&Suite::default(), &cfg),
        Err(HarnessError::Config(_))
    ));
}

#[test]
fn missing_scene_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, _) = trivial_fixture(0);
    let (_, other) = trivial_fixture(1);
    write_suite(dir.path(), &[scene], &[other]);
    let cfg = config(dir.path(), AgentSpec::BuiltinHeuristic, 1, "x.jsonl");
    assert!(matches!(run_batch(&cfg), Err(HarnessError::MissingScene { .. })));
}

// ---------------------------------------------------------------- report

fn result_with(id: usize, depth: usize) -> EpisodeResult {
    let o = StageOutcome {
        find_obj: depth > 0,
        pick: depth > 1,
        find_rec: depth > 2,
        place: depth > 3,
        ..Default::default()
    };
    EpisodeResult::from_outcome(&format!("ep{id:04}"), o, 100).unwrap()
}

fn write_results(path: &Path, counts: [usize; 4], n: usize) {
    // counts are cumulative stage successes: find_obj >= pick >= find_rec >= place
    let results: Vec<EpisodeResult> = (0..n)
        .map(|i| result_with(i, counts.iter().filter(|&&c| i < c).count()))
        .collect();
    write_jsonl(path, &results).unwrap();
}

#[test]
fn report_reproduces_table_row_formatting() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rl_rl_gt.jsonl");
    write_results(&path, [557, 502, 352, 116], 1000);
    let rows = report(&[path]).unwrap();
    let row = rows[0].row();
    let cells: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(&cells[1..7], &["1000", "55.7", "50.2", "35.2", "11.6", "38.2"]);
    assert!(rows[0].partial >= rows[0].overall);
}

#[test]
fn report_rows_follow_file_names() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b_all.jsonl");
    let a = dir.path().join("a_half.jsonl");
    write_results(&b, [4, 4, 4, 4], 4);
    write_results(&a, [2, 1, 1, 0], 4);
    let rows = report(&[b, a]).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["a_half", "b_all"]);
    let all: &SummaryTable = &rows[1];
    assert_eq!(
        [all.find_obj, all.pick, all.find_rec, all.overall, all.partial],
        [1.0; 5]
    );
    assert_eq!(rows[0].partial, 0.25);
}

#[test]
fn report_rejects_schema_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"episode\": 3}\n").unwrap();
    assert!(matches!(report(&[path]), Err(HarnessError::Parse { .. })));
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert!(report(&[empty]).is_err());
}

// ---------------------------------------------------------------- protocol framing

fn first_observation() -> (WireObservation, Message) {
    let (scene, episode) = trivial_fixture(0);
    let mut sim = Sim::new(
        Arc::new(scene),
        Arc::new(episode.clone()),
        SimConfig::default(),
        NoiseProfile::GROUND_TRUTH,
        1,
    );
    let obs = sim.observe();
    let reset = Message::Reset {
        episode: episode.id.clone(),
        goal_spec: sim.goal_spec(),
        config: ResetConfig {
            width: obs.width,
            height: obs.height,
            seed: 1,
        },
    };
    (WireObservation::encode(&obs), reset)
}

fn serve_lines(messages: &[String]) -> (Result<(), ProtocolError>, Vec<Message>) {
    let input = messages.join("\n") + "\n";
    let mut out = Vec::new();
    let make = || -> Box<dyn Agent> { Box::new(HeuristicAgent::new(AgentConfig::default())) };
    let r = serve(Cursor::new(input.into_bytes()), &mut out, make);
    let replies = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    (r, replies)
}

#[test]
fn proxy_answers_each_observation_with_one_action() {
    let (obs, reset) = first_observation();
    let obs = serde_json::to_string(&Message::Observation(obs)).unwrap();
    let (r, replies) = serve_lines(&[serde_json::to_string(&reset).unwrap(), obs.clone(), obs]);
    r.unwrap();
    assert_eq!(replies.len(), 3);
    assert_eq!(replies[0], Message::Ready);
    assert!(replies[1..].iter().all(|m| matches!(m, Message::Action { .. })));
}

#[test]
fn truncated_payload_surfaces_a_protocol_error() {
    let (mut obs, reset) = first_observation();
    let keep = obs.depth_b64_f32le.len() - 8;
    obs.depth_b64_f32le.truncate(keep);
    let (r, replies) = serve_lines(&[
        serde_json::to_string(&reset).unwrap(),
        serde_json::to_string(&Message::Observation(obs)).unwrap(),
    ]);
    assert!(matches!(r, Err(ProtocolError::Truncated { .. })), "{r:?}");
    assert_eq!(replies, vec![Message::Ready]);
}

#[test]
fn observation_before_reset_is_rejected() {
    let (obs, _) = first_observation();
    let (r, replies) = serve_lines(&[serde_json::to_string(&Message::Observation(obs)).unwrap()]);
    assert!(matches!(r, Err(ProtocolError::Unexpected { .. })));
    assert!(replies.is_empty());
}

#[test]
fn malformed_json_is_detected_within_one_message() {
    let (_, reset) = first_observation();
    let (r, replies) = serve_lines(&[
        serde_json::to_string(&reset).unwrap(),
        "{\"type\":\"observation\",".into(),
    ]);
    assert!(matches!(r, Err(ProtocolError::Malformed(_))), "{r:?}");
    assert_eq!(replies.len(), 1);
}
