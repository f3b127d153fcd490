mod common;

use std::collections::BTreeMap;

use observa::ingest::{galea_synth_sources, run_acquisition, AcquisitionConfig, Source, SynthPacing};
use observa::model::{galea_beta_descriptors, HostTs};
use observa::simulator::{DropoutWindow, FaultSpec, SimConfig};
use observa::store::{create_session, open_session, WriterOptions};
use observa::verify::{verify_integrity, verify_session, IntegrityStatus, Verdict, VerifyOptions};
use proptest::prelude::*;

use common::record_in_process;

fn verdict_of(faults: FaultSpec, seconds: f64) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.osf");
    record_in_process(&SimConfig::galea_beta(seconds, faults), &path);
    verify_session(&path, &VerifyOptions::default()).unwrap().verdict
}

#[test]
fn forty_ms_dropout_warns_with_exact_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.osf");
    let mut faults = FaultSpec::seeded(3);
    faults.dropout_windows.push(DropoutWindow::new(30.0, 0.04).on("eeg"));
    record_in_process(&SimConfig::galea_beta(60.0, faults), &path);
    let v = verify_session(&path, &VerifyOptions::default()).unwrap();
    let eeg = &v.continuity["eeg"];
    assert_eq!((eeg.actual_samples, eeg.expected_samples), (14990, 15000));
    assert_eq!(eeg.gaps.len(), 1);
    assert_eq!(eeg.gaps[0].missing_sample_estimate, 10);
    assert!((eeg.completeness_ratio - 14990.0 / 15000.0).abs() < 1e-12);
    for (id, c) in &v.continuity {
        if id != "eeg" {
            assert!(c.gaps.is_empty() && c.completeness_ratio == 1.0, "{id}");
        }
    }
    assert_eq!(v.verdict, Verdict::Warn);
    let line = v.one_line();
    assert!(line.starts_with("verdict=WARN integrity=PASS streams=6 gaps=1 min_completeness=0.999333"), "{line}");
}

#[test]
fn large_dropout_fails() {
    let mut faults = FaultSpec::seeded(3);
    // 1 s of 10 s is 90% complete, below the 0.95 floor
    faults.dropout_windows.push(DropoutWindow::new(4.0, 1.0));
    assert_eq!(verdict_of(faults, 10.0), Verdict::Fail);
}

#[test]
fn clean_session_passes() {
    assert_eq!(verdict_of(FaultSpec::seeded(9), 10.0), Verdict::Pass);
}

#[test]
fn report_json_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.osf");
    let mut faults = FaultSpec::seeded(4);
    faults.clock_skew_ppm = 80.0;
    faults.timestamp_jitter_ms = 0.3;
    faults.dropout_windows.push(DropoutWindow::new(2.0, 0.1));
    let (report, _) = record_in_process(&SimConfig::galea_beta(5.0, faults), &path);
    let opts = VerifyOptions { ground_truth: Some(report), ..Default::default() };
    let a = verify_session(&path, &opts).unwrap().to_json_pretty();
    let b = verify_session(&path, &opts).unwrap().to_json_pretty();
    assert_eq!(a, b);
    let parsed: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(parsed["verdict"], "WARN");
    assert_eq!(parsed["integrity"]["status"], "PASS");
}

#[test]
fn unfinalized_session_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.osf");
    let sources: Vec<Box<dyn Source>> =
        galea_synth_sources(&galea_beta_descriptors(), 2.0, 1, SynthPacing::Unpaced, HostTs::from_nanos(0))
            .unwrap()
            .into_iter()
            .map(|s| Box::new(s) as Box<dyn Source>)
            .collect();
    let mut w =
        create_session(galea_beta_descriptors(), vec![], BTreeMap::new(), &path, WriterOptions::default()).unwrap();
    run_acquisition(sources, &mut w, &AcquisitionConfig::default()).unwrap();
    // simulate a crash: the writer is never finalized
    std::mem::forget(w);

    let integrity = verify_integrity(&path);
    match &integrity.status {
        IntegrityStatus::Fail { reason, .. } => assert!(reason.contains("unfinalized"), "{reason}"),
        IntegrityStatus::Pass => panic!("unfinalized file passed"),
    }
    let v = verify_session(&path, &VerifyOptions::default()).unwrap();
    assert_eq!(v.verdict, Verdict::Fail);
    assert!(v.one_line().starts_with("verdict=FAIL integrity=FAIL"));
}

#[test]
fn flipped_chunk_byte_names_the_chunk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.osf");
    record_in_process(&SimConfig::galea_beta(3.0, FaultSpec::seeded(2)), &path);
    let entry = open_session(&path).unwrap().index("emg").unwrap()[12].clone();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[entry.offset as usize + 40] ^= 0x80;
    std::fs::write(&path, &bytes).unwrap();
    let r = verify_integrity(&path);
    let first = r.first_corrupt_chunk().expect("damage located");
    assert_eq!((first.stream_id.as_str(), first.sequence_number, first.offset), ("emg", 12, entry.offset));
}

#[test]
fn jitter_sets_the_fit_residual() {
    // oracle: uniform host jitter on [-J, J] has standard deviation J / sqrt(3)
    let j_ms = 0.6;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.osf");
    let mut faults = FaultSpec::seeded(21);
    faults.timestamp_jitter_ms = j_ms;
    record_in_process(&SimConfig::galea_beta(60.0, faults), &path);
    let v = verify_session(&path, &VerifyOptions::default()).unwrap();
    let expected_ns = j_ms * 1e6 / 3f64.sqrt();
    for (id, a) in &v.alignment.unwrap().streams {
        let rms = a.mapping.unwrap().rms_residual_ns;
        // mag has 84 fit points, the 250 Hz streams 600
        let tol = if id == "mag" { 0.25 } else { 0.1 };
        assert!((rms / expected_ns - 1.0).abs() < tol, "{id}: rms {rms} vs {expected_ns}");
    }

    // without jitter the residual is only integer rounding
    let path = dir.path().join("clean.osf");
    record_in_process(&SimConfig::galea_beta(60.0, FaultSpec::seeded(21)), &path);
    let v = verify_session(&path, &VerifyOptions::default()).unwrap();
    for a in v.alignment.unwrap().streams.values() {
        assert!(a.mapping.unwrap().rms_residual_ns <= 1.0, "{a:?}");
    }
}

fn window() -> impl Strategy<Value = DropoutWindow> {
    (0.5f64..8.5, 0.01f64..1.0, prop::sample::select(vec![None, Some("eeg"), Some("mag"), Some("imu")])).prop_map(
        |(start, dur, s)| {
            let w = DropoutWindow::new(start, dur.min(9.5 - start));
            match s {
                Some(id) => w.on(id),
                None => w,
            }
        },
    )
}

fn overlaps(a: &DropoutWindow, b: &DropoutWindow) -> bool {
    let same = a.stream.is_none() || b.stream.is_none() || a.stream == b.stream;
    same && a.start_s < b.start_s + b.duration_s && b.start_s < a.start_s + a.duration_s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn more_faults_never_improve_the_verdict(
        base in prop::collection::vec(window(), 0..3),
        extra in window(),
        skew in -200.0f64..200.0,
        jitter in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        // keep windows disjoint per stream, as the simulator requires
        let mut windows: Vec<DropoutWindow> = Vec::new();
        for w in base {
            if windows.iter().all(|o| !overlaps(o, &w)) {
                windows.push(w);
            }
        }
        prop_assume!(windows.iter().all(|o| !overlaps(o, &extra)));

        let mut less = FaultSpec::seeded(seed);
        less.dropout_windows = windows.clone();
        let mut more = less.clone();
        more.dropout_windows.push(extra);
        more.clock_skew_ppm = skew;
        more.timestamp_jitter_ms = jitter;

        let a = verdict_of(less, 10.0);
        let b = verdict_of(more, 10.0);
        prop_assert!(b >= a, "{:?} then {:?}", a, b);
    }
}
