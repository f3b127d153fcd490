use std::io::Write;

use observa::markers::{
    marker_to_line, parse_marker_line, run_task_harness, spawn_line_reader, MarkerDecoder, MarkerError, Pacing,
    ScheduledPrimitive, TaskScript, VecSink,
};
use observa::model::{DenyList, InteractionPrimitive, Payload, PrimitiveKind};

fn every_100_ms(n: usize) -> TaskScript {
    let events = (0..n)
        .map(|i| ScheduledPrimitive {
            at_s: i as f64 * 0.1,
            primitive: InteractionPrimitive::new(PrimitiveKind::ALL[i % 4], format!("step-{i}"))
                .with_payload(Payload::new().with("index", i as i64)),
        })
        .collect();
    TaskScript::new(n as f64 * 0.1, events).unwrap()
}

#[test]
fn real_time_harness_keeps_a_100_ms_cadence() {
    let sink = VecSink::new();
    assert_eq!(run_task_harness(&every_100_ms(30), &sink, Pacing::RealTime, "task").unwrap(), 30);
    let markers = sink.take();
    let mut deviations: Vec<f64> =
        markers.windows(2).map(|w| ((w[1].host_ts - w[0].host_ts) as f64 / 1e6 - 100.0).abs()).collect();
    deviations.sort_by(f64::total_cmp);
    let p95 = deviations[(deviations.len() as f64 * 0.95).ceil() as usize - 1];
    assert!(p95 <= 5.0, "p95 deviation {p95} ms");
    assert!(markers.iter().enumerate().all(|(i, m)| m.marker_id == i as u64 && m.source == "task"));
}

#[test]
fn unpaced_harness_stamps_from_the_schedule() {
    let sink = VecSink::new();
    run_task_harness(&every_100_ms(50), &sink, Pacing::Unpaced, "task").unwrap();
    let markers = sink.take();
    assert!(markers.windows(2).all(|w| w[1].host_ts - w[0].host_ts == 100_000_000));
}

#[test]
fn scripts_round_trip_through_json() {
    let s = every_100_ms(12);
    assert_eq!(TaskScript::from_json_str(&s.to_json_string()).unwrap(), s);
}

#[test]
fn interpretative_payload_keys_are_rejected() {
    let primitive = InteractionPrimitive::new(PrimitiveKind::TimingEvent, "peak")
        .with_payload(Payload::new().with("stress_level", 3i64));
    let bad = TaskScript::new(1.0, vec![ScheduledPrimitive { at_s: 0.5, primitive }]);
    assert!(matches!(bad, Err(MarkerError::PolicyViolation(_))));

    let line = r#"{"kind":"TIMING_EVENT","label":"beep","payload":{"emotion":"calm"},"host_ts_ns":5}"#;
    assert!(matches!(
        parse_marker_line(line, 0, "ext", &DenyList::interpretative()),
        Err(MarkerError::PolicyViolation(_))
    ));
}

#[test]
fn unordered_script_is_invalid() {
    let json = r#"{"total_duration_s": 2, "events": [
        {"at_s": 1.0, "kind": "TIMING_EVENT", "label": "b"},
        {"at_s": 0.5, "kind": "TIMING_EVENT", "label": "a"}]}"#;
    assert!(matches!(TaskScript::from_json_str(json), Err(MarkerError::Validation(_))));
}

#[test]
fn line_reader_forwards_valid_lines_and_skips_bad_ones() {
    let (reader, mut writer) = std::io::pipe().unwrap();
    let sink = std::sync::Arc::new(VecSink::new());
    let handle =
        spawn_line_reader(reader, MarkerDecoder::new("pipe", DenyList::interpretative()), ArcSink(sink.clone()));

    let sent = every_100_ms(5);
    let harness_sink = VecSink::new();
    run_task_harness(&sent, &harness_sink, Pacing::Unpaced, "pipe").unwrap();
    let originals = harness_sink.take();
    for (i, m) in originals.iter().enumerate() {
        writeln!(writer, "{}", marker_to_line(m)).unwrap();
        if i == 2 {
            writeln!(writer, "not json").unwrap();
            writeln!(writer, r#"{{"kind":"TIMING_EVENT","label":"x","payload":{{"diagnosis":1}}}}"#).unwrap();
        }
    }
    drop(writer);
    assert_eq!(handle.join().unwrap(), 5);
    let got = sink.take();
    assert_eq!(got.len(), 5);
    for (a, b) in got.iter().zip(&originals) {
        assert_eq!(a.primitive, b.primitive);
        assert_eq!(a.host_ts, b.host_ts);
    }
}

struct ArcSink(std::sync::Arc<VecSink>);

impl observa::markers::MarkerSink for ArcSink {
    fn emit(&self, m: observa::model::EventMarker) -> Result<(), MarkerError> {
        self.0.emit(m)
    }
}
