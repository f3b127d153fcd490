use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use super::{IngestError, Source, SourceHandle, SourceItem, SourceKind, StopToken};
use crate::model::{EventMarker, StreamDescriptor};
use crate::store::format::{self, RecordType, SessionHeader};
use crate::store::StoreError;
use crate::verify::{verify_integrity, IntegrityStatus};

/// Emission pacing for replay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReplaySpeed {
    /// Emit as fast as possible.
    Unpaced,
    /// Reproduce the original host-time spacing divided by this factor.
    Multiplier(f64),
}

impl FromStr for ReplaySpeed {
    type Err = IngestError;

    /// Accepts `unpaced`, `10`, `10x` or `0.5x`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("unpaced") {
            return Ok(ReplaySpeed::Unpaced);
        }
        let v: f64 = s
            .trim_end_matches(['x', 'X'])
            .parse()
            .map_err(|_| IngestError::InvalidConfig(format!("bad replay speed {s:?}")))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(IngestError::InvalidConfig("replay speed must be positive".into()));
        }
        Ok(ReplaySpeed::Multiplier(v))
    }
}

/// Sequential re-emission of a recorded session in its original record
/// order.
///
/// A finalized session must pass integrity verification before anything is
/// emitted. An unfinalized one is replayed up to its last intact record,
/// after which the iterator yields [`IngestError::CorruptSession`].
pub struct ReplaySource {
    file: BufReader<File>,
    header: SessionHeader,
    offset: u64,
    limit: u64,
    finalized: bool,
    speed: ReplaySpeed,
    origin_ns: Option<i64>,
    started: Option<Instant>,
    only: Option<String>,
    done: bool,
}

pub fn replay_source(path: impl AsRef<Path>, speed: ReplaySpeed) -> Result<ReplaySource, IngestError> {
    ReplaySource::open(path.as_ref(), speed, None)
}

fn corrupt(e: StoreError) -> IngestError {
    match e {
        StoreError::CorruptSession { offset, reason } => IngestError::CorruptSession { offset, reason },
        other => IngestError::Store(other),
    }
}

impl ReplaySource {
    fn open(path: &Path, speed: ReplaySpeed, only: Option<String>) -> Result<Self, IngestError> {
        let file = File::open(path).map_err(StoreError::from)?;
        let len = file.metadata().map_err(StoreError::from)?.len();
        let mut r = BufReader::new(file);
        format::read_preamble(&mut r).map_err(corrupt)?;
        let footer = format::read_footer(&mut r, len).map_err(corrupt)?;
        let (limit, finalized) = match footer {
            Some(manifest_offset) => {
                let integrity = verify_integrity(path);
                if let IntegrityStatus::Fail { reason, .. } = integrity.status {
                    return Err(IngestError::IntegrityFailure(reason));
                }
                (manifest_offset, true)
            }
            None => (len, false),
        };
        let head = format::read_record_at(&mut r, format::PREAMBLE_LEN, limit).map_err(corrupt)?;
        if head.kind != RecordType::Header {
            return Err(IngestError::CorruptSession { offset: format::PREAMBLE_LEN, reason: "missing header".into() });
        }
        let header: SessionHeader = serde_json::from_slice(&head.payload).map_err(StoreError::from)?;
        let mut src = Self {
            file: r,
            header,
            offset: format::PREAMBLE_LEN + head.total_len(),
            limit,
            finalized,
            speed,
            origin_ns: None,
            started: None,
            only: None,
            done: false,
        };
        // Pacing origin: the first data record of the whole file, so that
        // per-stream replays of one session stay mutually aligned.
        let start = src.offset;
        if let Some(Ok(first)) = src.read_next() {
            src.origin_ns = Some(host_stamp(&first));
        }
        src.offset = start;
        src.done = false;
        src.only = only;
        Ok(src)
    }

    pub fn descriptors(&self) -> &[StreamDescriptor] {
        &self.header.descriptors
    }

    pub fn session_id(&self) -> &str {
        &self.header.session_id
    }

    pub fn header(&self) -> &SessionHeader {
        &self.header
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    fn read_next(&mut self) -> Option<Result<SourceItem, IngestError>> {
        loop {
            if self.done {
                return None;
            }
            if self.offset >= self.limit {
                self.done = true;
                if self.finalized {
                    return None;
                }
                return Some(Err(IngestError::CorruptSession {
                    offset: self.offset,
                    reason: "session ends without a footer".into(),
                }));
            }
            let at = self.offset;
            let rec = match format::read_record_at(&mut self.file, at, self.limit) {
                Ok(r) => r,
                Err(e) => {
                    self.done = true;
                    return Some(Err(corrupt(e)));
                }
            };
            self.offset += rec.total_len();
            let item = match rec.kind {
                RecordType::Chunk => format::decode_chunk(&rec.payload, &self.header.descriptors, at)
                    .map(SourceItem::Chunk)
                    .map_err(corrupt),
                RecordType::Marker => serde_json::from_slice::<EventMarker>(&rec.payload)
                    .map(SourceItem::Marker)
                    .map_err(|e| IngestError::CorruptSession { offset: at, reason: e.to_string() }),
                RecordType::Header | RecordType::Manifest => {
                    self.done = true;
                    return Some(Err(IngestError::CorruptSession { offset: at, reason: "unexpected record".into() }));
                }
            };
            match item {
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
                Ok(item) if self.wanted(&item) => return Some(Ok(item)),
                Ok(_) => continue,
            }
        }
    }

    fn wanted(&self, item: &SourceItem) -> bool {
        match (&self.only, item) {
            (None, _) => true,
            (Some(id), SourceItem::Chunk(c)) => &c.stream_id == id,
            (Some(id), SourceItem::Marker(m)) => &m.source == id,
        }
    }

    fn pace(&mut self, item: &SourceItem) {
        let ReplaySpeed::Multiplier(speed) = self.speed else { return };
        let Some(origin) = self.origin_ns else { return };
        let started = *self.started.get_or_insert_with(Instant::now);
        let offset = (host_stamp(item) - origin).max(0) as f64 / speed;
        let due = Duration::from_nanos(offset as u64);
        if let Some(wait) = due.checked_sub(started.elapsed()) {
            std::thread::sleep(wait);
        }
    }
}

fn host_stamp(item: &SourceItem) -> i64 {
    match item {
        SourceItem::Chunk(c) => c.host_receipt_ts.nanos(),
        SourceItem::Marker(m) => m.host_ts.nanos(),
    }
}

impl Iterator for ReplaySource {
    type Item = Result<SourceItem, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        let item = self.read_next()?;
        if let Ok(i) = &item {
            self.pace(i);
        }
        Some(item)
    }
}

/// A replay restricted to one stream (or one marker source), usable as an
/// acquisition [`Source`] to re-record a session.
pub struct ReplayStreamSource {
    handle: SourceHandle,
    inner: ReplaySource,
}

impl Source for ReplayStreamSource {
    fn handle(&self) -> &SourceHandle {
        &self.handle
    }

    fn handle_mut(&mut self) -> &mut SourceHandle {
        &mut self.handle
    }

    fn next_item(&mut self, stop: &StopToken) -> Result<Option<SourceItem>, IngestError> {
        if stop.is_stopped() {
            return Ok(None);
        }
        self.inner.next().transpose()
    }
}

/// One [`ReplayStreamSource`] per recorded stream and marker source.
pub fn replay_stream_sources(
    path: impl AsRef<Path>,
    speed: ReplaySpeed,
) -> Result<Vec<ReplayStreamSource>, IngestError> {
    let path = path.as_ref();
    let probe = ReplaySource::open(path, speed, None)?;
    let mut descs: Vec<StreamDescriptor> = probe.header.descriptors.clone();
    let mut marker_sources = probe.header.marker_sources.clone();
    // sources first seen after the header was written
    for item in ReplaySource::open(path, ReplaySpeed::Unpaced, None)?.flatten() {
        if let SourceItem::Marker(m) = item {
            if !marker_sources.contains(&m.source) {
                marker_sources.push(m.source);
            }
        }
    }
    descs.extend(marker_sources.into_iter().map(StreamDescriptor::marker));
    descs
        .into_iter()
        .map(|d| {
            let inner = ReplaySource::open(path, speed, Some(d.stream_id.clone()))?;
            Ok(ReplayStreamSource { handle: SourceHandle::new(d, SourceKind::Replay), inner })
        })
        .collect()
}
