use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::format::{self, RawRecord, RecordType, SessionHeader};
use super::StoreError;
use crate::model::{Chunk, ChunkIndexEntry, EventMarker, SessionDigests, SessionManifest, StreamDescriptor};

/// How a reader came to trust the manifest it holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadMode {
    /// Manifest read from a valid footer.
    Finalized,
    /// Manifest rebuilt by scanning an unfinalized file up to the last
    /// intact record.
    Recovering,
}

/// Read access to one session file.
pub struct SessionReader {
    path: PathBuf,
    file: Mutex<BufReader<File>>,
    data_end: u64,
    manifest: SessionManifest,
    mode: ReadMode,
}

/// One record in file order.
#[derive(Clone, Debug, PartialEq)]
pub enum SessionRecord {
    Chunk(Chunk),
    Marker(EventMarker),
}

/// Opens a finalized session; unfinalized files are refused.
pub fn open_session(path: impl AsRef<Path>) -> Result<SessionReader, StoreError> {
    SessionReader::open(path.as_ref(), false)
}

/// Opens a session, salvaging an unfinalized one up to its last intact record.
pub fn open_session_recovering(path: impl AsRef<Path>) -> Result<SessionReader, StoreError> {
    SessionReader::open(path.as_ref(), true)
}

impl SessionReader {
    fn open(path: &Path, allow_recovery: bool) -> Result<Self, StoreError> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let mut r = BufReader::new(file);
        format::read_preamble(&mut r)?;

        let finalized = match format::read_footer(&mut r, len)? {
            Some(offset) => {
                let data_end = len - format::FOOTER_LEN;
                let rec = format::read_record_at(&mut r, offset, data_end);
                match rec {
                    Ok(rec) if rec.kind == RecordType::Manifest && offset + rec.total_len() == data_end => {
                        Some((offset, serde_json::from_slice::<SessionManifest>(&rec.payload)?))
                    }
                    Ok(_) => None,
                    Err(e) if !allow_recovery => return Err(e),
                    Err(_) => None,
                }
            }
            None => None,
        };

        if let Some((manifest_offset, manifest)) = finalized {
            return Ok(Self {
                path: path.to_path_buf(),
                file: Mutex::new(r),
                data_end: manifest_offset,
                manifest,
                mode: ReadMode::Finalized,
            });
        }
        if !allow_recovery {
            return Err(StoreError::CorruptSession { offset: len, reason: "unfinalized session (no footer)".into() });
        }
        let (manifest, data_end) = recover(&mut r, len)?;
        Ok(Self { path: path.to_path_buf(), file: Mutex::new(r), data_end, manifest, mode: ReadMode::Recovering })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn manifest(&self) -> &SessionManifest {
        &self.manifest
    }

    pub fn mode(&self) -> ReadMode {
        self.mode
    }

    pub fn descriptor(&self, stream_id: &str) -> Result<&StreamDescriptor, StoreError> {
        self.manifest.descriptor(stream_id).ok_or_else(|| StoreError::UnknownStream(stream_id.to_string()))
    }

    pub fn index(&self, stream_id: &str) -> Result<&[ChunkIndexEntry], StoreError> {
        self.descriptor(stream_id)?;
        Ok(self.manifest.chunk_index.get(stream_id).map(Vec::as_slice).unwrap_or(&[]))
    }

    fn read_raw(&self, offset: u64) -> Result<RawRecord, StoreError> {
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        format::read_record_at(&mut *f, offset, self.data_end)
    }

    fn read_chunk_at(&self, entry: &ChunkIndexEntry) -> Result<Chunk, StoreError> {
        let rec = self.read_raw(entry.offset)?;
        if rec.kind != RecordType::Chunk || rec.total_len() != entry.record_len as u64 {
            return Err(StoreError::CorruptSession {
                offset: entry.offset,
                reason: "index entry does not point at a matching chunk record".into(),
            });
        }
        format::decode_chunk(&rec.payload, &self.manifest.descriptors, entry.offset)
    }

    /// Chunks of one stream in sequence order, optionally restricted to a
    /// half-open range of sequence numbers.
    pub fn read_chunks(&self, stream_id: &str, range: Option<Range<u64>>) -> Result<Vec<Chunk>, StoreError> {
        self.index(stream_id)?
            .iter()
            .filter(|e| range.as_ref().is_none_or(|r| r.contains(&e.sequence_number)))
            .map(|e| self.read_chunk_at(e))
            .collect()
    }

    pub fn read_markers(&self) -> Result<Vec<EventMarker>, StoreError> {
        self.manifest
            .marker_offsets
            .iter()
            .map(|&off| {
                let rec = self.read_raw(off)?;
                if rec.kind != RecordType::Marker {
                    return Err(StoreError::CorruptSession { offset: off, reason: "expected a marker record".into() });
                }
                Ok(serde_json::from_slice(&rec.payload)?)
            })
            .collect()
    }

    /// Every chunk and marker in the order it was written.
    pub fn records(&self) -> RecordIter<'_> {
        RecordIter { reader: self, next: None, done: false }
    }
}

/// Sequential scan over a reader's records.
pub struct RecordIter<'a> {
    reader: &'a SessionReader,
    next: Option<u64>,
    done: bool,
}

impl Iterator for RecordIter<'_> {
    type Item = Result<SessionRecord, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            let offset = match self.next {
                Some(o) => o,
                None => {
                    // skip the header record
                    match self.reader.read_raw(format::PREAMBLE_LEN) {
                        Ok(h) => format::PREAMBLE_LEN + h.total_len(),
                        Err(e) => {
                            self.done = true;
                            return Some(Err(e));
                        }
                    }
                }
            };
            if offset >= self.reader.data_end {
                self.done = true;
                return None;
            }
            let rec = match self.reader.read_raw(offset) {
                Ok(r) => r,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            };
            self.next = Some(offset + rec.total_len());
            let item = match rec.kind {
                RecordType::Chunk => format::decode_chunk(&rec.payload, &self.reader.manifest.descriptors, offset)
                    .map(SessionRecord::Chunk),
                RecordType::Marker => {
                    serde_json::from_slice(&rec.payload).map(SessionRecord::Marker).map_err(Into::into)
                }
                RecordType::Header | RecordType::Manifest => continue,
            };
            if item.is_err() {
                self.done = true;
            }
            return Some(item);
        }
    }
}

/// Rebuilds a manifest from an unfinalized file. Returns it with the end of
/// the last intact record.
fn recover(r: &mut BufReader<File>, len: u64) -> Result<(SessionManifest, u64), StoreError> {
    let head = format::read_record_at(r, format::PREAMBLE_LEN, len)?;
    if head.kind != RecordType::Header {
        return Err(StoreError::CorruptSession {
            offset: format::PREAMBLE_LEN,
            reason: "missing session header".into(),
        });
    }
    let header: SessionHeader = serde_json::from_slice(&head.payload)?;
    let mut index: BTreeMap<String, Vec<ChunkIndexEntry>> =
        header.descriptors.iter().map(|d| (d.stream_id.clone(), Vec::new())).collect();
    let mut marker_offsets = Vec::new();
    let mut marker_sources = header.marker_sources.clone();
    let mut offset = format::PREAMBLE_LEN + head.total_len();

    while let Ok(rec) = format::read_record_at(r, offset, len) {
        match rec.kind {
            RecordType::Chunk => match format::decode_chunk(&rec.payload, &header.descriptors, offset) {
                Ok(c) => index.entry(c.stream_id.clone()).or_default().push(ChunkIndexEntry {
                    offset,
                    record_len: rec.total_len() as u32,
                    sequence_number: c.sequence_number,
                    first_device_ts: c.first_device_ts,
                    n_samples: c.n_samples() as u32,
                }),
                Err(_) => break,
            },
            RecordType::Marker => match serde_json::from_slice::<EventMarker>(&rec.payload) {
                Ok(m) => {
                    if !marker_sources.contains(&m.source) {
                        marker_sources.push(m.source);
                    }
                    marker_offsets.push(offset)
                }
                Err(_) => break,
            },
            RecordType::Header | RecordType::Manifest => break,
        }
        offset += rec.total_len();
    }

    let manifest = SessionManifest {
        session_id: header.session_id,
        created_host_ts: header.created_host_ts,
        descriptors: header.descriptors,
        marker_sources,
        chunk_index: index,
        marker_offsets,
        digests: SessionDigests::default(),
        metadata: header.metadata,
    };
    Ok((manifest, offset))
}
