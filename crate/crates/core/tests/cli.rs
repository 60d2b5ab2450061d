use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mindpace::metrics::{Report, TurnMetrics};
use mindpace::transcript::{EventPayload, Transcript};
use mindpace::model::SegmentKind;

fn manifest() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn fixture(name: &str) -> String {
    manifest().join("tests/fixtures").join(name).to_str().unwrap().to_string()
}

fn mindpace(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mindpace"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap()
}

fn read<T: serde::de::DeserializeOwned>(path: PathBuf) -> T {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn speak_first_on_the_three_segment_scenario_has_no_extra_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let out = mindpace(&["run", "--strategy", "spkfirst", "--scenario", &fixture("three_segments.json")], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: TurnMetrics = read(dir.path().join("out/metrics-spkfirst.json"));
    assert_eq!(m.extra_tokens_before_first_response, 0);
    let t: Transcript = read(dir.path().join("out/transcript-spkfirst.json"));
    assert_eq!(t.final_think.len(), 200);
}

#[test]
fn direct_has_no_think_events() {
    let dir = tempfile::tempdir().unwrap();
    let out = mindpace(&["run", "--strategy", "direct"], dir.path());
    assert!(out.status.success());
    let t: Transcript = read(dir.path().join("out/transcript-direct.json"));
    assert!(t.final_think.is_empty());
    assert!(!t.events.iter().any(|e| matches!(
        &e.payload,
        EventPayload::GenStart { segment, .. } | EventPayload::GenEnd { segment, .. } if segment.kind == SegmentKind::Think
    ) || matches!(e.payload, EventPayload::SegmentHandoff { .. })));
}

#[test]
fn compare_orders_rows_and_matches_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = mindpace(&["compare", "--scenario", &fixture("cot_762.json")], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let order: Vec<&str> = stdout.lines().skip(2).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(order, ["tbs", "thkfirst", "spkfirst", "interleaved:8:20"]);

    let raw = std::fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    let report = Report::from_json(&raw).unwrap();
    let extras: Vec<usize> = report.rows.iter().map(|r| r.extra_tokens).collect();
    assert_eq!(extras, [762, 80, 0, 8]);

    let schema: serde_json::Value = read(manifest().join("schema/report.schema.json"));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let instance: serde_json::Value = serde_json::from_str(&raw).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let mut broken = instance.clone();
    broken["rows"][0]["extra_tokens"] = serde_json::json!(-1);
    assert!(!validator.is_valid(&broken));
}

#[test]
fn exit_codes_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], i32, &str); 6] = [
        (&["compare", "--strategy", "tbs"], 2, "usage"),
        (&["run", "--strategy", "slowest"], 3, "unknown_strategy"),
        (&["run", "--scenario", "missing.json"], 4, "scenario"),
        (&["run", "--config", "backend.toml"], 5, "backend"),
        (&["run", "--config", "missing.toml"], 8, "config"),
        (&["run", "--strategy", "interleaved:4:10", "--scenario", &fixture("three_segments.json")], 7, "aborted"),
    ];
    std::fs::write(
        dir.path().join("backend.toml"),
        "[backend.formulation]\nbackend_kind = \"remote\"\nendpoint = \"\"\nmodel = \"m\"\n",
    )
    .unwrap();
    for (args, code, kind) in cases {
        let out = mindpace(args, dir.path());
        assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let err = error_json(&out);
        assert_eq!(err["error"]["code"], code);
        assert_eq!(err["error"]["kind"], kind);
    }
    let out = mindpace(&["run", "--bogus-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_continuation_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = mindpace(&["run", "--strategy", "thkfirst", "--scenario", &fixture("three_segments.json")], dir.path());
    assert_eq!(out.status.code(), Some(7));
    let msg = error_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("(1, 0)"), "{msg}");
    // partial transcript is still written
    let t: Transcript = read(dir.path().join("out/transcript-thkfirst.json"));
    assert!(t.aborted);
}

#[test]
fn corpus_writes_records_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let out = mindpace(&["corpus", "--input", &fixture("corpus_small.jsonl"), "--out", "r.jsonl"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = std::fs::read_to_string(dir.path().join("r.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 3);
    let stats: serde_json::Value = read(dir.path().join("r.jsonl.stats.json"));
    assert_eq!(stats["dropped"]["markdown_list"], 2);
    assert_eq!(stats["records"], 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("records=3"));

    let out = mindpace(&["corpus", "--input", "nope.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(6));
    let out = mindpace(&["corpus", "--input", "x", "--mode", "drop", "--keep-prob", "1.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "out = \"from-file\"\n[policy]\nthink_segment_tokens = 40\n").unwrap();
    let out = mindpace(&["run", "--config", "c.toml", "--strategy", "thkfirst"], dir.path());
    assert!(out.status.success());
    let m: TurnMetrics = read(dir.path().join("from-file/metrics-thkfirst.json"));
    assert_eq!(m.extra_tokens_before_first_response, 40);
    let out = mindpace(&["run", "--config", "c.toml", "--strategy", "thkfirst", "--tc", "20", "--out", "flag"], dir.path());
    assert!(out.status.success());
    let m: TurnMetrics = read(dir.path().join("flag/metrics-thkfirst.json"));
    assert_eq!(m.extra_tokens_before_first_response, 20);
}
