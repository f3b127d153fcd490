use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_observa");

fn observa(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("OBSERVA_LOG", "off").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The last stderr line must be the structured error.
fn error_line(o: &Output) -> Value {
    let err = stderr(o);
    let last = err.lines().last().unwrap_or_default();
    serde_json::from_str(last).unwrap_or_else(|_| panic!("not a JSON error line: {err}"))
}

/// Starts a simulator on ephemeral ports and returns it with its
/// `(stream_id, address)` endpoints.
fn spawn_simulator(extra: &[&str], report: &Path) -> (Child, Vec<(String, String)>) {
    let mut child = Command::new(BIN)
        .args(["simulate", "--listen", "127.0.0.1:0", "--accept-timeout", "10", "--report"])
        .arg(report)
        .args(extra)
        .env("OBSERVA_LOG", "off")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let mut endpoints = Vec::new();
    // six data streams and the marker stream
    while endpoints.len() < 7 {
        let line = lines.next().expect("simulator printed its endpoints").unwrap();
        let parts: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(parts[0], "listening", "{line}");
        endpoints.push((parts[1].to_string(), parts[2].to_string()));
    }
    (child, endpoints)
}

fn record_from(endpoints: &[(String, String)], out: &Path) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg("record").arg("--out").arg(out).env("OBSERVA_LOG", "off");
    for (id, addr) in endpoints {
        cmd.arg("--stream").arg(format!("{id}={addr}"));
    }
    cmd.output().unwrap()
}

fn export_rows(session: &Path, stream: &str) -> Vec<String> {
    let o = observa(&["export", session.to_str().unwrap(), "--stream", stream]);
    assert!(o.status.success(), "{}", stderr(&o));
    stdout(&o).lines().map(str::to_string).collect()
}

#[test]
fn simulate_record_verify_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("truth.json");
    let session = dir.path().join("s.osf");
    let (mut sim, endpoints) = spawn_simulator(&["--duration", "2", "--skew-ppm", "40", "--markers", "4"], &report);

    let rec = record_from(&endpoints, &session);
    assert!(rec.status.success(), "{}", stderr(&rec));
    let stats: Value = serde_json::from_str(&stdout(&rec)).unwrap();
    assert_eq!(stats["streams"]["eeg"]["samples_received"], 500);
    assert_eq!(stats["streams"]["sim-markers"]["markers_written"], 4);
    assert!(sim.wait().unwrap().success());

    let v = observa(&["verify", session.to_str().unwrap(), "--ground-truth", report.to_str().unwrap()]);
    let out = stdout(&v);
    assert_eq!(v.status.code(), Some(0), "{out}");
    let last = out.lines().last().unwrap();
    assert!(last.starts_with("verdict=PASS integrity=PASS streams=6 gaps=0"), "{last}");
    let json_part = &out[..out.len() - last.len() - 1];
    let parsed: Value = serde_json::from_str(json_part).unwrap();
    assert_eq!(parsed["verdict"], "PASS");
}

#[test]
fn dropout_is_reported_as_warn() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("truth.json");
    let session = dir.path().join("s.osf");
    let (mut sim, endpoints) = spawn_simulator(&["--duration", "2", "--dropout", "1.0:0.04:emg"], &report);
    let rec = record_from(&endpoints, &session);
    assert!(rec.status.success(), "{}", stderr(&rec));
    assert!(sim.wait().unwrap().success());

    let v = observa(&["verify", session.to_str().unwrap(), "--format", "line"]);
    assert_eq!(v.status.code(), Some(1));
    let line = stdout(&v);
    assert!(line.starts_with("verdict=WARN integrity=PASS streams=6 gaps=1"), "{line}");
}

#[test]
fn unreachable_endpoint_exits_with_connection_code() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("s.osf");
    let o = observa(&[
        "record",
        "--stream",
        "eeg=127.0.0.1:1",
        "--connect-timeout-ms",
        "300",
        "--out",
        session.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(5));
    let e = error_line(&o);
    assert_eq!(e["error"], "connection");
    assert_eq!(e["exit_code"], 5);
    assert!(!session.exists(), "no partial session on a failed connect");
}

#[test]
fn sigint_finalizes_the_session() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("s.osf");
    let child = Command::new(BIN)
        .args(["record", "--synth", "--duration", "30", "--out"])
        .arg(&session)
        .env("OBSERVA_LOG", "off")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    thread::sleep(Duration::from_millis(1200));
    let killed = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let started = Instant::now();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert!(started.elapsed() < Duration::from_secs(5), "stopped promptly");
    let stats: Value = serde_json::from_slice(&out.stdout).unwrap();
    let eeg = stats["streams"]["eeg"]["samples_received"].as_u64().unwrap();
    assert!(eeg > 0 && eeg < 30 * 250, "{eeg}");

    let v = observa(&["verify", session.to_str().unwrap(), "--format", "line"]);
    let line = stdout(&v);
    assert!(line.contains("integrity=PASS"), "{line}");
}

#[test]
fn export_has_one_row_per_sample() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("s.osf");
    let o = observa(&["record", "--synth", "--unpaced", "--duration", "2", "--out", session.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = export_rows(&session, "eeg");
    assert_eq!(rows.len(), 501);
    assert_eq!(rows[0], "timestamp_ns,F1,F2,C3,Cz,C4,P3,Pz,P4,O1,O2");
    assert_eq!(export_rows(&session, "mag").len(), 51);

    let host = observa(&["export", session.to_str().unwrap(), "--stream", "eeg", "--clock", "host"]);
    assert_eq!(stdout(&host).lines().count(), 501);
}

#[test]
fn replay_rerecords_identical_samples() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.osf");
    let b = dir.path().join("b.osf");
    assert!(observa(&["record", "--synth", "--unpaced", "--duration", "3", "--out", a.to_str().unwrap()])
        .status
        .success());
    let r = observa(&["replay", a.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(r.status.success(), "{}", stderr(&r));
    for stream in ["eeg", "emg", "eog", "ppg", "imu", "mag"] {
        assert_eq!(export_rows(&a, stream), export_rows(&b, stream), "{stream}");
    }

    let lines = observa(&["replay", a.to_str().unwrap()]);
    let n = stdout(&lines).lines().filter(|l| l.contains("\"type\":\"chunk\"")).count();
    // five 250 Hz streams in 25-sample chunks, mag in 3-sample chunks
    assert_eq!(n, 5 * 30 + 25);
}

#[test]
fn task_run_and_marker_pipe() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("task.json");
    std::fs::write(
        &script,
        r#"{"total_duration_s": 1.0, "events": [
            {"at_s": 0.0, "kind": "TASK_PROGRESSION", "label": "start"},
            {"at_s": 0.2, "kind": "MOVEMENT_SEQUENCE", "label": "reach", "payload": {"target": 3}},
            {"at_s": 0.4, "kind": "ERROR_RECOVERY", "label": "retry"}
        ]}"#,
    )
    .unwrap();
    let lines = dir.path().join("markers.jsonl");
    let o =
        observa(&["task-run", "--script", script.to_str().unwrap(), "--unpaced", "--sink", lines.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&lines).unwrap().lines().count(), 3);

    let session = dir.path().join("s.osf");
    let rec = observa(&[
        "record",
        "--synth",
        "--unpaced",
        "--duration",
        "1",
        "--marker-pipe",
        lines.to_str().unwrap(),
        "--out",
        session.to_str().unwrap(),
    ]);
    assert!(rec.status.success(), "{}", stderr(&rec));
    let csv = observa(&["export", session.to_str().unwrap(), "--stream", "eeg", "--markers"]);
    let text = stdout(&csv);
    assert_eq!(text.lines().count(), 4, "{text}");
    assert!(text.contains("MOVEMENT_SEQUENCE,reach"), "{text}");

    std::fs::write(&script, r#"{"total_duration_s": 1.0, "events": [{"at_s": 0.1, "kind": "TIMING_EVENT", "payload": {"stress_level": 2}}]}"#).unwrap();
    let bad = observa(&["task-run", "--script", script.to_str().unwrap(), "--unpaced"]);
    assert_eq!(bad.status.code(), Some(7), "{}", stderr(&bad));
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("s.osf");
    let config = dir.path().join("record.json");
    std::fs::write(&config, r#"{"duration": 1.0, "unpaced": true, "synth": true, "seed": 7}"#).unwrap();
    let o = Command::new(BIN)
        .args(["record", "--config"])
        .arg(&config)
        .args(["--duration", "2", "--out"])
        .arg(&session)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    let effective = err.lines().find_map(|l| l.strip_prefix("effective config: ")).unwrap();
    let effective: Value = serde_json::from_str(effective).unwrap();
    assert_eq!(effective["duration"], 2.0);
    assert_eq!(effective["seed"], 7);
    assert_eq!(effective["queue_capacity"], 256);
    assert_eq!(export_rows(&session, "eeg").len(), 501);

    std::fs::write(&config, r#"{"durration": 1.0}"#).unwrap();
    let o = observa(&["record", "--config", config.to_str().unwrap(), "--synth", "--out", session.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn usage_errors_and_help() {
    for args in [&["frobnicate"][..], &["verify", "--fail-below", "x", "f"], &["record", "--synth"], &[]] {
        let o = observa(args);
        assert_eq!(o.status.code(), Some(3), "{args:?}");
        assert_eq!(error_line(&o)["error"], "usage");
    }
    let o = observa(&["record", "--synth", "--connect", "127.0.0.1:9000", "--out", "/tmp/never.osf"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(observa(&["--help"]).status.success());
    assert!(observa(&["verify", "--help"]).status.success());

    let o = observa(&["verify", "/nonexistent/session.osf"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn damaged_session_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let session = dir.path().join("s.osf");
    assert!(observa(&["record", "--synth", "--unpaced", "--duration", "2", "--out", session.to_str().unwrap()])
        .status
        .success());
    let mut bytes = std::fs::read(&session).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&session, bytes).unwrap();
    let v = observa(&["verify", session.to_str().unwrap(), "--format", "line"]);
    assert_eq!(v.status.code(), Some(2));
    assert!(stdout(&v).contains("integrity=FAIL"));
    let r = observa(&["replay", session.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(6), "{}", stderr(&r));
}
