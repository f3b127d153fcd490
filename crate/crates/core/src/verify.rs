//! Session verification: integrity, continuity and temporal alignment.
//!
//! [`verify_session`] runs all three and folds them into a
//! [`Verdict`]. Integrity is checked from raw bytes and never trusts the
//! manifest further than needed to name a damaged chunk. Continuity and
//! alignment only run on sessions whose integrity passed.
//!
//! Thresholds are engineering choices rather than physiological ones:
//! completeness below 0.95 fails, any gap or completeness below 0.999
//! warns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{ChunkIndexEntry, ClockMapping, DeviceTs, HostTs, SessionManifest};
use crate::simulator::SimulatorReport;
use crate::store::format::{self, RecordType};
use crate::store::{open_session, SessionReader, StoreError};
use crate::timebase::{detect_gaps, estimate_clock_mapping, Gap, HostTimeline, DEFAULT_TOLERANCE_FACTOR};

/// Ordered worst-last so `max` combines verdicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Warn => "WARN",
            Verdict::Fail => "FAIL",
        }
    }

    /// Process exit code for scripting: 0, 1, 2.
    pub fn exit_code(self) -> i32 {
        self as i32
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A chunk named by stream and sequence number.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChunkRef {
    pub stream_id: String,
    pub sequence_number: u64,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IntegrityStatus {
    Pass,
    Fail {
        reason: String,
        /// Damaged chunks in file order; the first is the earliest damage.
        corrupt_chunks: Vec<ChunkRef>,
        /// File offset of the first damaged record, when one is known.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        first_bad_offset: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityReport {
    #[serde(flatten)]
    pub status: IntegrityStatus,
    pub records_checked: u64,
}

impl IntegrityReport {
    pub fn passed(&self) -> bool {
        self.status == IntegrityStatus::Pass
    }

    pub fn first_corrupt_chunk(&self) -> Option<&ChunkRef> {
        match &self.status {
            IntegrityStatus::Fail { corrupt_chunks, .. } => corrupt_chunks.first(),
            IntegrityStatus::Pass => None,
        }
    }

    fn fail(reason: impl Into<String>, chunks: Vec<ChunkRef>, at: Option<u64>, records: u64) -> Self {
        Self {
            status: IntegrityStatus::Fail { reason: reason.into(), corrupt_chunks: chunks, first_bad_offset: at },
            records_checked: records,
        }
    }
}

/// Checks a session file byte for byte: preamble, footer, manifest, every
/// record's CRC32C, exact record tiling, per-stream CRC rollups and the
/// file SHA-256.
pub fn verify_integrity(path: impl AsRef<Path>) -> IntegrityReport {
    match check_integrity(path.as_ref()) {
        Ok(r) => r,
        Err(e) => IntegrityReport::fail(e.to_string(), Vec::new(), None, 0),
    }
}

fn check_integrity(path: &Path) -> Result<IntegrityReport, StoreError> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    let mut r = BufReader::new(file);
    if let Err(e) = format::read_preamble(&mut r) {
        return Ok(IntegrityReport::fail(format!("bad preamble: {e}"), Vec::new(), Some(0), 0));
    }
    let Some(manifest_offset) = format::read_footer(&mut r, len)? else {
        return Ok(IntegrityReport::fail("unfinalized", Vec::new(), Some(len.saturating_sub(format::FOOTER_LEN)), 0));
    };
    let data_end = len - format::FOOTER_LEN;
    let manifest = match format::read_record_at(&mut r, manifest_offset, data_end) {
        Ok(rec) if rec.kind == RecordType::Manifest && manifest_offset + rec.total_len() == data_end => {
            match serde_json::from_slice::<SessionManifest>(&rec.payload) {
                Ok(m) => m,
                Err(e) => {
                    return Ok(IntegrityReport::fail(
                        format!("manifest unreadable: {e}"),
                        vec![],
                        Some(manifest_offset),
                        0,
                    ))
                }
            }
        }
        Ok(_) => return Ok(IntegrityReport::fail("manifest record misplaced", vec![], Some(manifest_offset), 0)),
        Err(e) => return Ok(IntegrityReport::fail(format!("manifest damaged: {e}"), vec![], Some(manifest_offset), 0)),
    };

    // index entries by offset, to name the chunk at any damaged position
    let mut by_offset: BTreeMap<u64, ChunkRef> = BTreeMap::new();
    for (id, entries) in &manifest.chunk_index {
        for e in entries {
            by_offset.insert(
                e.offset,
                ChunkRef { stream_id: id.clone(), sequence_number: e.sequence_number, offset: e.offset },
            );
        }
    }
    let mut problems: Vec<String> = Vec::new();
    let mut corrupt: BTreeMap<u64, ChunkRef> = BTreeMap::new();
    let mut first_bad: Option<u64> = None;

    // every indexed chunk on its own, so damage is pinned per chunk even
    // when it also breaks the sequential scan
    for (id, entries) in &manifest.chunk_index {
        for e in entries {
            if let Err(why) = check_indexed_chunk(&mut r, e, &manifest, id, manifest_offset) {
                corrupt.insert(e.offset, by_offset[&e.offset].clone());
                problems.push(format!("{id} chunk {}: {why}", e.sequence_number));
                note_bad(e.offset, &mut first_bad);
            }
        }
    }

    // sequential scan: tiling, record CRCs, rollups and SHA-256
    let mut records = 0u64;
    let mut sha = Sha256::new();
    let mut rollups: Vec<u32> = vec![0; manifest.descriptors.len()];
    let mut offset = format::PREAMBLE_LEN;
    let mut marker_offsets = Vec::new();
    let mut preamble = vec![0u8; format::PREAMBLE_LEN as usize];
    r.seek(SeekFrom::Start(0))?;
    r.read_exact(&mut preamble)?;
    sha.update(&preamble);
    let mut scan_ok = true;
    while offset < manifest_offset {
        match format::read_record_at(&mut r, offset, manifest_offset) {
            Ok(rec) => {
                records += 1;
                let mut bytes = Vec::with_capacity(rec.total_len() as usize);
                format::encode_record(rec.kind, &rec.payload, &mut bytes);
                sha.update(&bytes);
                match rec.kind {
                    RecordType::Header if offset != format::PREAMBLE_LEN => {
                        problems.push(format!("stray header record at {offset}"));
                        note_bad(offset, &mut first_bad);
                    }
                    RecordType::Header => {}
                    RecordType::Chunk => {
                        let idx =
                            rec.payload.get(..2).map_or(usize::MAX, |b| u16::from_le_bytes([b[0], b[1]]) as usize);
                        match rollups.get_mut(idx) {
                            Some(c) => *c = crc32c::crc32c_append(*c, &rec.payload),
                            None => {
                                problems.push(format!("chunk at {offset} names stream index {idx}"));
                                note_bad(offset, &mut first_bad);
                            }
                        }
                        if !by_offset.contains_key(&offset) {
                            problems.push(format!("chunk at {offset} is not indexed"));
                            note_bad(offset, &mut first_bad);
                        }
                    }
                    RecordType::Marker => marker_offsets.push(offset),
                    RecordType::Manifest => {
                        problems.push(format!("stray manifest record at {offset}"));
                        note_bad(offset, &mut first_bad);
                    }
                }
                offset += rec.total_len();
            }
            Err(e) => {
                problems.push(format!("record scan broke at {offset}: {e}"));
                note_bad(offset, &mut first_bad);
                if let Some(c) = by_offset.get(&offset) {
                    corrupt.insert(offset, c.clone());
                }
                scan_ok = false;
                break;
            }
        }
    }
    if offset == format::PREAMBLE_LEN || records == 0 {
        problems.push("missing session header".into());
    }

    if scan_ok {
        if offset != manifest_offset {
            problems.push("records do not end at the manifest".into());
        }
        if hex::encode(sha.finalize()) != manifest.digests.file_sha256 {
            problems.push("file SHA-256 mismatch".into());
        }
        if marker_offsets != manifest.marker_offsets {
            problems.push("marker offsets differ from manifest".into());
        }
        for (d, crc) in manifest.descriptors.iter().zip(&rollups) {
            let expected = manifest.digests.streams.get(&d.stream_id);
            if expected.map(String::as_str) != Some(format!("{crc:08x}").as_str()) {
                problems.push(format!("{} CRC32C rollup mismatch", d.stream_id));
            }
        }
    }

    if problems.is_empty() {
        return Ok(IntegrityReport { status: IntegrityStatus::Pass, records_checked: records });
    }
    Ok(IntegrityReport::fail(problems.join("; "), corrupt.into_values().collect(), first_bad, records))
}

fn check_indexed_chunk<R: Read + Seek>(
    r: &mut R,
    e: &ChunkIndexEntry,
    manifest: &SessionManifest,
    stream_id: &str,
    limit: u64,
) -> Result<(), String> {
    let rec = format::read_record_at(r, e.offset, limit).map_err(|e| e.to_string())?;
    if rec.kind != RecordType::Chunk {
        return Err("not a chunk record".into());
    }
    if rec.total_len() != e.record_len as u64 {
        return Err("record length differs from index".into());
    }
    let c = format::decode_chunk(&rec.payload, &manifest.descriptors, e.offset).map_err(|e| e.to_string())?;
    if c.stream_id != stream_id
        || c.sequence_number != e.sequence_number
        || c.first_device_ts != e.first_device_ts
        || c.n_samples() as u32 != e.n_samples
    {
        return Err("chunk differs from its index entry".into());
    }
    Ok(())
}

fn note_bad(at: u64, first_bad: &mut Option<u64>) {
    *first_bad = Some(first_bad.map_or(at, |f| f.min(at)));
}

// ---------------------------------------------------------------------------
// Continuity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamContinuity {
    pub nominal_rate_hz: f64,
    pub expected_samples: u64,
    pub actual_samples: u64,
    pub gaps: Vec<Gap>,
    pub completeness_ratio: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Per-stream sample accounting and gap detection.
///
/// `expected = round(rate * (last_ts - first_ts) + 1)` over device
/// timestamps; completeness is `actual / expected` clamped to 1, and 1.0
/// with a "no data" flag for an empty stream.
pub fn verify_continuity(
    reader: &SessionReader,
    tolerance_factor: f64,
) -> Result<BTreeMap<String, StreamContinuity>, StoreError> {
    let mut out = BTreeMap::new();
    for d in &reader.manifest().descriptors {
        let Some(rate) = d.nominal_rate_hz else { continue };
        let chunks = reader.read_chunks(&d.stream_id, None)?;
        let actual: u64 = chunks.iter().map(|c| c.n_samples() as u64).sum();
        let mut flags = Vec::new();
        let (expected, gaps) = if actual == 0 {
            flags.push("no data".to_string());
            (0, Vec::new())
        } else {
            let first = chunks.first().expect("non-empty").first_device_ts;
            let last = chunks.last().expect("non-empty").last_device_ts();
            let span_s = (last - first) as f64 / 1e9;
            let expected = (rate * span_s + 1.0).round().max(0.0) as u64;
            let gaps = match detect_gaps(&chunks, d, tolerance_factor) {
                Ok(g) => g,
                Err(e) => {
                    flags.push(format!("gap detection failed: {e}"));
                    Vec::new()
                }
            };
            (expected, gaps)
        };
        let completeness_ratio = if expected == 0 { 1.0 } else { (actual as f64 / expected as f64).min(1.0) };
        out.insert(
            d.stream_id.clone(),
            StreamContinuity {
                nominal_rate_hz: rate,
                expected_samples: expected,
                actual_samples: actual,
                gaps,
                completeness_ratio,
                flags,
            },
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Alignment

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamAlignment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<ClockMapping>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skew_ppm: Option<f64>,
    /// Device clock reading at the simulator's start instant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skew_error_ppm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_error_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerRoundTrip {
    pub marker_id: u64,
    pub stream_id: String,
    pub planted_sample: u64,
    /// Recovered position on the emitted sample grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovered_position: Option<f64>,
    /// |recovered - planted| in sample periods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_periods: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerCheck {
    pub planted: usize,
    pub recovered: usize,
    pub within_half_period: usize,
    pub max_error_periods: f64,
    pub markers: Vec<MarkerRoundTrip>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSection {
    pub streams: BTreeMap<String, StreamAlignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markers: Option<MarkerCheck>,
}

/// Fit pairs for one stream: each chunk's last device timestamp against
/// its host receipt time.
pub fn alignment_pairs(chunks: &[crate::model::Chunk]) -> Vec<(DeviceTs, HostTs)> {
    chunks.iter().map(|c| (c.last_device_ts(), c.host_receipt_ts)).collect()
}

/// Fits a device-to-host mapping per stream and, given simulator ground
/// truth, scores the clock recovery and every planted marker.
pub fn verify_alignment(
    reader: &SessionReader,
    ground_truth: Option<&SimulatorReport>,
) -> Result<AlignmentSection, StoreError> {
    let mut streams = BTreeMap::new();
    let mut mappings = BTreeMap::new();
    for d in &reader.manifest().descriptors {
        if d.nominal_rate_hz.is_none() {
            continue;
        }
        let chunks = reader.read_chunks(&d.stream_id, None)?;
        let pairs = alignment_pairs(&chunks);
        let entry = match estimate_clock_mapping(&pairs, true) {
            Ok(m) => {
                mappings.insert(d.stream_id.clone(), m);
                let mut a = StreamAlignment {
                    mapping: Some(m),
                    skew_ppm: Some(m.device_skew_ppm()),
                    offset_ms: None,
                    skew_error_ppm: None,
                    offset_error_ms: None,
                    error: None,
                };
                if let Some(gt) = ground_truth {
                    let off = device_reading_at(&m, gt.t0_host_ns);
                    a.offset_ms = Some(off / 1e6);
                    a.offset_error_ms = Some(off / 1e6 - gt.faults.clock_offset_ms);
                    a.skew_error_ppm = Some(m.device_skew_ppm() - gt.faults.clock_skew_ppm);
                }
                a
            }
            Err(e) => StreamAlignment {
                mapping: None,
                skew_ppm: None,
                offset_ms: None,
                skew_error_ppm: None,
                offset_error_ms: None,
                error: Some(e.to_string()),
            },
        };
        streams.insert(d.stream_id.clone(), entry);
    }

    let markers = match ground_truth {
        Some(gt) => Some(check_markers(reader, gt, &mappings)?),
        None => None,
    };
    Ok(AlignmentSection { streams, markers })
}

/// Device clock reading at host instant `host_ns` under `m`, in ns.
fn device_reading_at(m: &ClockMapping, host_ns: i64) -> f64 {
    // host = slope * device + intercept, solved in the small difference
    (host_ns - m.intercept_ns) as f64 / m.slope
}

fn check_markers(
    reader: &SessionReader,
    gt: &SimulatorReport,
    mappings: &BTreeMap<String, ClockMapping>,
) -> Result<MarkerCheck, StoreError> {
    let recorded: BTreeMap<u64, crate::model::EventMarker> = reader
        .read_markers()?
        .into_iter()
        .filter(|m| m.source == gt.marker_stream_id)
        .map(|m| (m.marker_id, m))
        .collect();
    let mut timelines: BTreeMap<String, (Vec<crate::model::Chunk>, HostTimeline)> = BTreeMap::new();
    let mut out = Vec::new();
    for p in &gt.planted_markers {
        let mut rt = MarkerRoundTrip {
            marker_id: p.marker_id,
            stream_id: p.stream_id.clone(),
            planted_sample: p.sample_index,
            recovered_position: None,
            error_periods: None,
        };
        let (Some(m), Some(mapping), Some(served)) =
            (recorded.get(&p.marker_id), mappings.get(&p.stream_id), gt.streams.get(&p.stream_id))
        else {
            out.push(rt);
            continue;
        };
        if !timelines.contains_key(&p.stream_id) {
            let desc = reader.descriptor(&p.stream_id)?;
            let chunks = reader.read_chunks(&p.stream_id, None)?;
            let tl = HostTimeline::new(&chunks, desc, mapping);
            timelines.insert(p.stream_id.clone(), (chunks, tl));
        }
        let (chunks, tl) = &timelines[&p.stream_id];
        if let Ok(a) = tl.align(m, mapping) {
            if let Some(dev) = device_ts_of_sample(chunks, a.sample_index as usize) {
                let grid = (dev.nanos() - served.device_origin_ns) as f64 / served.period_ns as f64;
                let pos = grid.round() + a.fractional_offset;
                rt.recovered_position = Some(pos);
                rt.error_periods = Some((pos - p.sample_index as f64).abs());
            }
        }
        out.push(rt);
    }
    let errors: Vec<f64> = out.iter().filter_map(|r| r.error_periods).collect();
    Ok(MarkerCheck {
        planted: out.len(),
        recovered: errors.len(),
        within_half_period: errors.iter().filter(|e| **e <= 0.5).count(),
        max_error_periods: errors.iter().copied().fold(0.0, f64::max),
        markers: out,
    })
}

fn device_ts_of_sample(chunks: &[crate::model::Chunk], mut index: usize) -> Option<DeviceTs> {
    for c in chunks {
        let n = c.n_samples();
        if index < n {
            return Some(c.device_ts(index));
        }
        index -= n;
    }
    None
}

// ---------------------------------------------------------------------------
// Report

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Completeness below this fails.
    pub fail_below: f64,
    /// Completeness below this (or any gap) warns.
    pub warn_below: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { fail_below: 0.95, warn_below: 0.999 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub tolerance_factor: f64,
    pub thresholds: Thresholds,
    pub ground_truth: Option<SimulatorReport>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { tolerance_factor: DEFAULT_TOLERANCE_FACTOR, thresholds: Thresholds::default(), ground_truth: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub session_id: Option<String>,
    pub integrity: IntegrityReport,
    pub continuity: BTreeMap<String, StreamContinuity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentSection>,
    pub thresholds: Thresholds,
    pub verdict: Verdict,
}

impl VerificationReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn total_gaps(&self) -> usize {
        self.continuity.values().map(|c| c.gaps.len()).sum()
    }

    pub fn min_completeness(&self) -> Option<f64> {
        self.continuity.values().map(|c| c.completeness_ratio).reduce(f64::min)
    }

    /// `verdict=WARN integrity=PASS streams=6 gaps=1 min_completeness=0.999333 session=...`
    pub fn one_line(&self) -> String {
        let integrity = if self.integrity.passed() { "PASS" } else { "FAIL" };
        let mut line = format!(
            "verdict={} integrity={} streams={} gaps={}",
            self.verdict,
            integrity,
            self.continuity.len(),
            self.total_gaps()
        );
        if let Some(c) = self.min_completeness() {
            line.push_str(&format!(" min_completeness={c:.6}"));
        }
        if let Some(m) = self.alignment.as_ref().and_then(|a| a.markers.as_ref()) {
            line.push_str(&format!(" markers_within_half_period={}/{}", m.within_half_period, m.planted));
        }
        if let Some(id) = &self.session_id {
            line.push_str(&format!(" session={id}"));
        }
        line
    }
}

/// The verdict rule on its own: FAIL on integrity failure or completeness
/// below `fail_below`; WARN on any gap, any flag, or completeness below
/// `warn_below`; PASS otherwise.
pub fn verdict_for(
    integrity_passed: bool,
    continuity: &BTreeMap<String, StreamContinuity>,
    thresholds: &Thresholds,
) -> Verdict {
    if !integrity_passed {
        return Verdict::Fail;
    }
    continuity
        .values()
        .map(|c| {
            if c.completeness_ratio < thresholds.fail_below {
                Verdict::Fail
            } else if !c.gaps.is_empty() || !c.flags.is_empty() || c.completeness_ratio < thresholds.warn_below {
                Verdict::Warn
            } else {
                Verdict::Pass
            }
        })
        .max()
        .unwrap_or(Verdict::Pass)
}

/// Runs every check and derives the verdict.
pub fn verify_session(path: impl AsRef<Path>, opts: &VerifyOptions) -> Result<VerificationReport, StoreError> {
    let path = path.as_ref();
    let integrity = verify_integrity(path);
    if !integrity.passed() {
        return Ok(VerificationReport {
            session_id: None,
            integrity,
            continuity: BTreeMap::new(),
            alignment: None,
            thresholds: opts.thresholds,
            verdict: Verdict::Fail,
        });
    }
    let reader = open_session(path)?;
    let continuity = verify_continuity(&reader, opts.tolerance_factor)?;
    let alignment = verify_alignment(&reader, opts.ground_truth.as_ref())?;
    let verdict = verdict_for(true, &continuity, &opts.thresholds);
    Ok(VerificationReport {
        session_id: Some(reader.manifest().session_id.clone()),
        integrity,
        continuity,
        alignment: Some(alignment),
        thresholds: opts.thresholds,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cont(ratio: f64, gaps: usize) -> StreamContinuity {
        StreamContinuity {
            nominal_rate_hz: 250.0,
            expected_samples: 100,
            actual_samples: 100,
            gaps: (0..gaps)
                .map(|i| Gap {
                    stream_id: "eeg".into(),
                    after_sequence_number: i as u64,
                    expected_next_device_ts: DeviceTs::from_nanos(0),
                    observed_next_device_ts: DeviceTs::from_nanos(1),
                    missing_sample_estimate: 1,
                })
                .collect(),
            completeness_ratio: ratio,
            flags: vec![],
        }
    }

    #[test]
    fn verdict_rule() {
        let t = Thresholds::default();
        let one = |c| BTreeMap::from([("eeg".to_string(), c)]);
        assert_eq!(verdict_for(true, &one(cont(1.0, 0)), &t), Verdict::Pass);
        assert_eq!(verdict_for(true, &one(cont(1.0, 1)), &t), Verdict::Warn);
        assert_eq!(verdict_for(true, &one(cont(0.998, 0)), &t), Verdict::Warn);
        assert_eq!(verdict_for(true, &one(cont(0.949, 0)), &t), Verdict::Fail);
        assert_eq!(verdict_for(false, &one(cont(1.0, 0)), &t), Verdict::Fail);
        assert_eq!(verdict_for(true, &BTreeMap::new(), &t), Verdict::Pass);
        assert_eq!(Verdict::Warn.exit_code(), 1);
    }
}
