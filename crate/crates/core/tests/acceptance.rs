//! Acceptance suite. Runs every criterion at full tolerance and prints one
//! line per criterion; exits non-zero if any of them fails.
//!
//! The two paced network runs go first and concurrently because they are
//! wall-clock bound and need an idle CPU for honest receipt stamps. The
//! CPU-heavy criteria follow one at a time.

mod common;

use std::fs::OpenOptions;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::time::{Duration, Instant};

use observa::model::HostTs;
use observa::simulator::{DropoutWindow, FaultSpec, SimConfig, SimulatorReport};
use observa::store::{create_session, open_session, SessionRecord, WriterOptions};
use observa::timebase::{resample_linear, TimeSeries};
use observa::verify::{verify_integrity, verify_session, Verdict, VerificationReport, VerifyOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::gen::{random_session, Limits};
use common::{record_in_process, record_network};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn verify_with(path: &Path, report: &SimulatorReport) -> VerificationReport {
    let opts = VerifyOptions { ground_truth: Some(report.clone()), ..Default::default() };
    verify_session(path, &opts).expect("session readable")
}

fn percentile(mut xs: Vec<f64>, p: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * xs.len() as f64).ceil() as usize;
    xs[rank.clamp(1, xs.len()) - 1]
}

// ---------------------------------------------------------------------------
// 1. lossless capture

fn expected_count(stream: &str) -> u64 {
    if stream == "mag" {
        1500
    } else {
        15000
    }
}

/// Checks counts, completeness and verdict of a clean 60 s session.
fn lossless(v: &VerificationReport) -> Result<(), String> {
    if v.verdict != Verdict::Pass {
        return Err(format!("verdict {}", v.verdict));
    }
    if v.continuity.len() != 6 {
        return Err(format!("{} streams", v.continuity.len()));
    }
    for (id, c) in &v.continuity {
        if c.actual_samples != expected_count(id) || c.expected_samples != expected_count(id) {
            return Err(format!("{id}: {} of {} samples", c.actual_samples, c.expected_samples));
        }
        if c.completeness_ratio != 1.0 {
            return Err(format!("{id}: completeness {}", c.completeness_ratio));
        }
    }
    Ok(())
}

fn acc1_run(paced: bool) -> (Result<(), String>, Duration) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acc1.osf");
    let started = Instant::now();
    let (report, _) = record_network(&SimConfig::galea_beta(60.0, FaultSpec::seeded(42)), &path, paced);
    let v = verify_with(&path, &report);
    let elapsed = started.elapsed();
    (lossless(&v), elapsed)
}

fn acc1(paced: (Result<(), String>, Duration)) -> Outcome {
    let unpaced = acc1_run(false);
    let limit = |r: &(Result<(), String>, Duration), max: u64| match &r.0 {
        Ok(()) if r.1 < Duration::from_secs(max) => Ok(()),
        Ok(()) => Err(format!("took {:.1} s", r.1.as_secs_f64())),
        Err(e) => Err(e.clone()),
    };
    let p = limit(&paced, 90);
    let u = limit(&unpaced, 5);
    Outcome::new(
        p.is_ok() && u.is_ok(),
        format!(
            "paced {:.1} s ({}), unpaced {:.2} s ({}); 15000 x5 + 1500 samples, completeness 1.0 required",
            paced.1.as_secs_f64(),
            p.err().unwrap_or_else(|| "PASS".into()),
            unpaced.1.as_secs_f64(),
            u.err().unwrap_or_else(|| "PASS".into()),
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. clock recovery

fn skewed(seed: u64, jitter_ms: f64) -> FaultSpec {
    let mut f = FaultSpec::seeded(seed);
    f.clock_skew_ppm = 50.0;
    f.clock_offset_ms = 120.0;
    f.timestamp_jitter_ms = jitter_ms;
    f
}

/// Worst absolute (skew ppm, offset ms) error over all streams.
fn clock_errors(v: &VerificationReport) -> (f64, f64) {
    let a = v.alignment.as_ref().expect("integrity passed");
    a.streams.values().fold((0.0, 0.0), |(s, o), x| {
        (
            f64::max(s, x.skew_error_ppm.map_or(f64::INFINITY, f64::abs)),
            f64::max(o, x.offset_error_ms.map_or(f64::INFINITY, f64::abs)),
        )
    })
}

fn acc2_network() -> (f64, f64) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acc2.osf");
    let (report, _) = record_network(&SimConfig::galea_beta(60.0, skewed(42, 0.0)), &path, true);
    clock_errors(&verify_with(&path, &report))
}

fn acc2(network: (f64, f64)) -> Outcome {
    const TRIALS: u64 = 1000;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mc.osf");
    let (mut skews, mut offsets) = (Vec::new(), Vec::new());
    for seed in 0..TRIALS {
        let (report, _) = record_in_process(&SimConfig::galea_beta(60.0, skewed(seed, 0.5)), &path);
        let (s, o) = clock_errors(&verify_with(&path, &report));
        skews.push(s);
        offsets.push(o);
    }
    let (s99, o99) = (percentile(skews, 99.0), percentile(offsets, 99.0));
    let pass = network.0 <= 5.0 && network.1 <= 1.0 && s99 <= 5.0 && o99 <= 1.0;
    Outcome::new(
        pass,
        format!(
            "loopback |skew err| {:.3} ppm, |offset err| {:.3} ms; {TRIALS} trials p99 {:.3} ppm, {:.3} ms (bounds 5 ppm, 1 ms)",
            network.0, network.1, s99, o99
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. continuity

/// Samples of a `period`-spaced stream whose device offset from sample 0
/// falls in `[a, b)`.
fn samples_in(a: i64, b: i64, period: i64) -> u64 {
    let ceil = |x: i64| (x + period - 1).div_euclid(period);
    (ceil(b) - ceil(a)) as u64
}

fn window_ns(w: &DropoutWindow) -> (i64, i64) {
    let a = (w.start_s * 1e9).round() as i64;
    (a, a + (w.duration_s * 1e9).round() as i64)
}

fn acc3() -> Outcome {
    const DURATION: f64 = 60.0;
    const TRIALS: u64 = 100;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acc3.osf");
    let streams: Vec<(String, i64)> = SimConfig::galea_beta(1.0, FaultSpec::seeded(0))
        .descriptors
        .iter()
        .map(|d| (d.stream_id.clone(), d.sample_period_ns().unwrap() as i64))
        .collect();
    let mut failures = Vec::new();
    let mut total_gaps = 0;

    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let k = rng.gen_range(1..=10);
        // one slot per window keeps them apart; margins keep every window
        // at least one sample away from the slot edges
        let slot = DURATION / k as f64;
        let mut faults = FaultSpec::seeded(trial);
        let mut injected: Vec<(String, u64)> = Vec::new();
        for j in 0..k {
            let (id, period) = &streams[rng.gen_range(0..streams.len())];
            let p = *period as f64 / 1e9;
            let len = rng.gen_range(2.0 * p..(slot / 2.0).min(2.0));
            let start = j as f64 * slot + 2.0 * p + rng.gen_range(0.0..slot - len - 4.0 * p);
            let w = DropoutWindow::new(start, len).on(id.as_str());
            let (a, b) = window_ns(&w);
            injected.push((id.clone(), samples_in(a, b, *period)));
            faults.dropout_windows.push(w);
        }
        record_in_process(&SimConfig::galea_beta(DURATION, faults), &path);
        let v = verify_session(&path, &VerifyOptions::default()).unwrap();
        for (id, period) in &streams {
            let mut want: Vec<u64> = injected.iter().filter(|(s, _)| s == id).map(|(_, n)| *n).collect();
            let mut got: Vec<u64> = v.continuity[id].gaps.iter().map(|g| g.missing_sample_estimate).collect();
            total_gaps += got.len();
            want.sort_unstable();
            got.sort_unstable();
            if want != got || want.iter().any(|&n| n < 2) {
                failures.push(format!("trial {trial} {id} (period {period}): injected {want:?}, found {got:?}"));
            }
        }
    }

    let mut false_positives = 0;
    for seed in 0..100 {
        record_in_process(&SimConfig::galea_beta(DURATION, FaultSpec::seeded(seed)), &path);
        let v = verify_session(&path, &VerifyOptions::default()).unwrap();
        false_positives += v.total_gaps();
    }
    let detail = format!(
        "{TRIALS} randomized trials, {total_gaps} gaps found, {} mismatches; {false_positives} false positives on 100 clean runs{}",
        failures.len(),
        failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
    );
    Outcome::new(failures.is_empty() && false_positives == 0, detail)
}

// ---------------------------------------------------------------------------
// 4. marker alignment

fn acc4() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acc4.osf");
    let cases = [(200.0, 1.0, 120.0, 1), (-200.0, 1.0, -250.0, 2), (200.0, 0.0, 0.0, 3), (0.0, 1.0, 3000.0, 4)];
    let (mut within, mut total, mut worst) = (0, 0, 0.0f64);
    for (skew, jitter, offset, seed) in cases {
        let mut f = FaultSpec::seeded(seed);
        f.clock_skew_ppm = skew;
        f.timestamp_jitter_ms = jitter;
        f.clock_offset_ms = offset;
        let mut config = SimConfig::galea_beta(60.0, f);
        config.marker_count = 100;
        let (report, _) = record_in_process(&config, &path);
        let m = verify_with(&path, &report).alignment.unwrap().markers.unwrap();
        within += m.within_half_period;
        total += m.planted;
        worst = worst.max(if m.recovered == m.planted { m.max_error_periods } else { f64::INFINITY });
    }
    Outcome::new(
        within == total && total == 100 * cases.len(),
        format!(
            "{within}/{total} markers within 0.5 periods over {} fault settings (|skew| <= 200 ppm, jitter <= 1 ms); worst {worst:.3} periods",
            cases.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. integrity

fn acc5() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acc5.osf");
    record_in_process(&SimConfig::galea_beta(1.0, FaultSpec::seeded(5)), &path);
    let len = std::fs::metadata(&path).unwrap().len();
    let reader = open_session(&path).unwrap();
    let mut chunks: Vec<(u64, u64, String, u64)> = Vec::new();
    for d in &reader.manifest().descriptors {
        for e in reader.index(&d.stream_id).unwrap() {
            chunks.push((e.offset, e.offset + e.record_len as u64, d.stream_id.clone(), e.sequence_number));
        }
    }
    drop(reader);
    let original = std::fs::read(&path).unwrap();
    let file = OpenOptions::new().read(true).write(true).open(&path).unwrap();

    let (mut undetected, mut misplaced, mut in_chunks) = (Vec::new(), Vec::new(), 0u64);
    for pos in 0..len {
        file.write_all_at(&[original[pos as usize] ^ 0xFF], pos).unwrap();
        let r = verify_integrity(&path);
        if r.passed() {
            undetected.push(pos);
        } else if let Some((_, _, id, seq)) = chunks.iter().find(|(a, b, ..)| (*a..*b).contains(&pos)) {
            in_chunks += 1;
            match r.first_corrupt_chunk() {
                Some(c) if &c.stream_id == id && c.sequence_number == *seq => {}
                other => misplaced.push((pos, other.cloned())),
            }
        }
        file.write_all_at(&original[pos as usize..pos as usize + 1], pos).unwrap();
    }
    assert!(verify_integrity(&path).passed(), "file restored");
    Outcome::new(
        len <= 64 * 1024 && undetected.is_empty() && misplaced.is_empty(),
        format!(
            "{len} byte session, {len} flipped positions: {} undetected; {in_chunks} inside chunk records, {} attributed to the wrong chunk",
            undetected.len(),
            misplaced.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. round trip

fn write_records(
    path: &Path,
    spec: &common::gen::SessionSpec,
    records: &[SessionRecord],
) -> Result<Vec<u8>, observa::store::StoreError> {
    let opts = WriterOptions {
        session_id: Some("acc6".into()),
        created_host_ts: Some(HostTs::from_nanos(7)),
        ..Default::default()
    };
    let mut w =
        create_session(spec.descriptors.clone(), spec.marker_sources.clone(), spec.metadata.clone(), path, opts)?;
    for r in records {
        match r {
            SessionRecord::Chunk(c) => w.append_chunk(c)?,
            SessionRecord::Marker(m) => w.append_marker(m)?,
        }
    }
    w.finalize()?;
    Ok(std::fs::read(path)?)
}

fn acc6() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.osf"), dir.path().join("b.osf"));
    let mut failures = Vec::new();
    let (mut records, mut bytes) = (0, 0);
    for seed in 0..200u64 {
        let spec = random_session(seed, &Limits::default());
        let first = write_records(&a, &spec, &spec.records).unwrap();
        let reader = open_session(&a).unwrap();
        let read: Vec<SessionRecord> = reader.records().collect::<Result<_, _>>().unwrap();
        let same_meta =
            reader.manifest().descriptors == spec.descriptors && reader.manifest().metadata == spec.metadata;
        // rewriting what was read must reproduce the file byte for byte
        let second = write_records(&b, &spec, &read).unwrap();
        if read != spec.records || !same_meta || first != second {
            failures.push(seed);
        }
        records += read.len();
        bytes += first.len();
    }
    Outcome::new(
        failures.is_empty(),
        format!("200 sessions, {records} records, {bytes} bytes; mismatching seeds {failures:?}"),
    )
}

// ---------------------------------------------------------------------------
// 7. throughput

fn acc7() -> Outcome {
    const SECONDS: f64 = 120.0;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("acc7.osf");
    let config = SimConfig::galea_beta(SECONDS, FaultSpec::seeded(7));
    let channels: u64 = config.descriptors.iter().map(|d| d.n_channels() as u64).sum();
    let realtime_samples: f64 = config.descriptors.iter().map(|d| d.nominal_rate_hz.unwrap()).sum();
    let realtime_values: f64 =
        config.descriptors.iter().map(|d| d.nominal_rate_hz.unwrap() * d.n_channels() as f64).sum();

    let started = Instant::now();
    let (_, stats) = record_network(&config, &path, false);
    let elapsed = started.elapsed().as_secs_f64();
    let samples = stats.total_samples() as f64;
    let values: f64 = stats
        .streams
        .iter()
        .filter_map(|(id, s)| {
            config
                .descriptors
                .iter()
                .find(|d| &d.stream_id == id)
                .map(|d| s.samples_received as f64 * d.n_channels() as f64)
        })
        .sum();
    let (sps, vps) = (samples / elapsed, values / elapsed);
    let needed = (10.0 * realtime_samples).max(65_000.0);
    Outcome::new(
        sps >= needed && vps >= (10.0 * realtime_values).max(65_000.0),
        format!(
            "{SECONDS} s of {} streams ({channels} channels) over loopback in {elapsed:.2} s: {sps:.0} samples/s ({:.0}x real time), {vps:.0} channel values/s ({:.0}x)",
            config.descriptors.len(),
            sps / realtime_samples,
            vps / realtime_values
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. resampling

fn acc8() -> Outcome {
    use std::f64::consts::TAU;
    // 1 Hz sine sampled at 25 Hz for 10 s, resampled onto a 250 Hz grid
    let src_t: Vec<i64> = (0..=250).map(|k| k * 40_000_000).collect();
    let src_v: Vec<f64> = src_t.iter().map(|&t| (TAU * t as f64 / 1e9).sin()).collect();
    let targets: Vec<i64> = (0..=2500).map(|k| k * 4_000_000).collect();
    let series = TimeSeries::new(src_t, vec![src_v]).unwrap();
    let out = resample_linear(&series, &targets).unwrap();
    let sq: f64 = targets.iter().zip(&out[0]).map(|(&t, v)| (v - (TAU * t as f64 / 1e9).sin()).powi(2)).sum();
    let rmse = (sq / targets.len() as f64).sqrt();
    // interpolation error h^2/2 * f''(t) * s(1-s) has RMS h^2 (2 pi)^2 / (2 sqrt(30) sqrt(2))
    let h: f64 = 0.04;
    let predicted = h * h * TAU * TAU / (2.0 * 30f64.sqrt() * 2f64.sqrt());
    Outcome::new(
        rmse <= 0.004,
        format!("rmse {rmse:.7} (bound 0.004; linear interpolation error model predicts {predicted:.7})"),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let started = Instant::now();
    let paced_1 = std::thread::spawn(|| acc1_run(true));
    let paced_2 = std::thread::spawn(acc2_network);
    let paced_1 = paced_1.join().expect("acc1 paced run");
    let paced_2 = paced_2.join().expect("acc2 paced run");

    type Criterion = Box<dyn FnOnce() -> Outcome>;
    let criteria: Vec<(&str, &str, Criterion)> = vec![
        ("ACC1", "lossless capture", Box::new(move || acc1(paced_1))),
        ("ACC2", "clock recovery", Box::new(move || acc2(paced_2))),
        ("ACC3", "continuity detection", Box::new(acc3)),
        ("ACC4", "marker alignment", Box::new(acc4)),
        ("ACC5", "integrity", Box::new(acc5)),
        ("ACC6", "format round trip", Box::new(acc6)),
        ("ACC7", "throughput", Box::new(acc7)),
        ("ACC8", "resampling fidelity", Box::new(acc8)),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let t = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "{id} {} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 8 criteria passed in {:.1} s", 8 - failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
