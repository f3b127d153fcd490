//! Fit residual of a clean loopback recording. Kept in its own test binary
//! so no other test competes for the CPU while receipts are stamped.

mod common;

use observa::simulator::{FaultSpec, SimConfig};
use observa::verify::{verify_session, VerifyOptions};

/// Worst per-stream RMS residual over 22 runs on the reference machine
/// (loopback, paced, one core) was 521 us, median 88 us. Frozen here with
/// 50 % headroom over the worst run.
const FROZEN_RMS_NS: f64 = 782_000.0;

#[test]
fn clean_loopback_residual_stays_at_the_measured_floor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.osf");
    let (report, _) = common::record_network(&SimConfig::galea_beta(10.0, FaultSpec::seeded(8)), &path, true);
    let v = verify_session(&path, &VerifyOptions { ground_truth: Some(report), ..Default::default() }).unwrap();
    let streams = v.alignment.unwrap().streams;
    let worst = streams.values().map(|a| a.mapping.unwrap().rms_residual_ns).fold(0.0, f64::max);
    println!("worst rms residual {:.1} us", worst / 1e3);
    assert!(worst <= FROZEN_RMS_NS, "{worst} ns");
}
