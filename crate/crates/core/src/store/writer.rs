use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::format::{self, RecordType, SessionHeader};
use super::StoreError;
use crate::clock::host_now;
use crate::model::{
    validate_descriptor, Chunk, ChunkIndexEntry, DenyList, EventMarker, HostTs, SessionDigests, SessionManifest,
    StreamDescriptor,
};

/// Knobs for [`create_session`].
#[derive(Clone, Debug)]
pub struct WriterOptions {
    /// Flush to the OS after this many chunk records...
    pub flush_every_chunks: usize,
    /// ...or once this much time has passed since the last flush.
    pub flush_interval: Duration,
    pub session_id: Option<String>,
    pub created_host_ts: Option<HostTs>,
    pub metadata_deny: DenyList,
}

impl Default for WriterOptions {
    fn default() -> Self {
        Self {
            flush_every_chunks: 64,
            flush_interval: Duration::from_millis(250),
            session_id: None,
            created_host_ts: None,
            metadata_deny: DenyList::identifying_metadata(),
        }
    }
}

struct StreamState {
    last_seq: Option<u64>,
    index: Vec<ChunkIndexEntry>,
    crc: u32,
}

/// Exclusive writer for one session file.
pub struct SessionWriter {
    path: PathBuf,
    out: BufWriter<File>,
    offset: u64,
    sha: Sha256,
    header: SessionHeader,
    stream_pos: HashMap<String, usize>,
    streams: Vec<StreamState>,
    marker_offsets: Vec<u64>,
    last_marker_id: HashMap<String, u64>,
    opts: WriterOptions,
    unflushed: usize,
    last_flush: Instant,
    finalized: bool,
}

/// Creates the on-disk skeleton of a new session.
pub fn create_session(
    descriptors: Vec<StreamDescriptor>,
    marker_sources: Vec<String>,
    metadata: BTreeMap<String, String>,
    path: impl AsRef<Path>,
    opts: WriterOptions,
) -> Result<SessionWriter, StoreError> {
    if let Some(k) = metadata.keys().find(|k| opts.metadata_deny.matches(k)) {
        return Err(StoreError::PolicyViolation(format!("metadata key {k:?} identifies a participant")));
    }
    let mut seen = HashSet::new();
    for d in &descriptors {
        let report = validate_descriptor(d, None);
        if !report.is_ok() {
            return Err(StoreError::InvalidDescriptor(format!("{}: {}", d.stream_id, report.violations.join("; "))));
        }
        if !seen.insert(d.stream_id.as_str()) {
            return Err(StoreError::InvalidDescriptor(format!("duplicate stream_id {}", d.stream_id)));
        }
    }
    if descriptors.len() > u16::MAX as usize {
        return Err(StoreError::InvalidDescriptor("too many streams".into()));
    }

    let path = path.as_ref().to_path_buf();
    let file = OpenOptions::new().write(true).create(true).truncate(true).open(&path)?;
    let header = SessionHeader {
        session_id: opts.session_id.clone().unwrap_or_else(|| uuid::Uuid::new_v4().to_string()),
        created_host_ts: opts.created_host_ts.unwrap_or_else(host_now),
        descriptors,
        marker_sources,
        metadata,
    };
    let stream_pos = header.descriptors.iter().enumerate().map(|(i, d)| (d.stream_id.clone(), i)).collect();
    let streams =
        header.descriptors.iter().map(|_| StreamState { last_seq: None, index: Vec::new(), crc: 0 }).collect();

    let mut w = SessionWriter {
        path,
        out: BufWriter::with_capacity(1 << 16, file),
        offset: 0,
        sha: Sha256::new(),
        header,
        stream_pos,
        streams,
        marker_offsets: Vec::new(),
        last_marker_id: HashMap::new(),
        opts,
        unflushed: 0,
        last_flush: Instant::now(),
        finalized: false,
    };
    let mut preamble = Vec::with_capacity(6);
    preamble.extend_from_slice(format::MAGIC);
    preamble.extend_from_slice(&format::VERSION.to_le_bytes());
    w.write_bytes(&preamble)?;
    let header_json = serde_json::to_vec(&w.header)?;
    w.write_record(RecordType::Header, &header_json)?;
    w.flush()?;
    Ok(w)
}

impl SessionWriter {
    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn session_id(&self) -> &str {
        &self.header.session_id
    }

    pub fn descriptors(&self) -> &[StreamDescriptor] {
        &self.header.descriptors
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    fn write_bytes(&mut self, bytes: &[u8]) -> Result<(), StoreError> {
        self.out.write_all(bytes)?;
        self.sha.update(bytes);
        self.offset += bytes.len() as u64;
        Ok(())
    }

    fn write_record(&mut self, kind: RecordType, payload: &[u8]) -> Result<u64, StoreError> {
        let at = self.offset;
        let mut buf = Vec::with_capacity(payload.len() + format::RECORD_OVERHEAD as usize);
        format::encode_record(kind, payload, &mut buf);
        self.write_bytes(&buf)?;
        Ok(at)
    }

    fn flush(&mut self) -> Result<(), StoreError> {
        self.out.flush()?;
        self.unflushed = 0;
        self.last_flush = Instant::now();
        Ok(())
    }

    fn maybe_flush(&mut self) -> Result<(), StoreError> {
        self.unflushed += 1;
        if self.unflushed >= self.opts.flush_every_chunks || self.last_flush.elapsed() >= self.opts.flush_interval {
            self.flush()?;
        }
        Ok(())
    }

    fn ensure_open(&self) -> Result<(), StoreError> {
        if self.finalized {
            Err(StoreError::AlreadyFinalized)
        } else {
            Ok(())
        }
    }

    pub fn append_chunk(&mut self, chunk: &Chunk) -> Result<(), StoreError> {
        self.ensure_open()?;
        let pos =
            *self.stream_pos.get(&chunk.stream_id).ok_or_else(|| StoreError::UnknownStream(chunk.stream_id.clone()))?;
        chunk.check(&self.header.descriptors[pos])?;
        if let Some(last) = self.streams[pos].last_seq {
            if chunk.sequence_number <= last {
                return Err(StoreError::SequenceRegression {
                    stream_id: chunk.stream_id.clone(),
                    last,
                    got: chunk.sequence_number,
                });
            }
        }
        let payload = format::encode_chunk(pos as u16, chunk);
        let offset = self.write_record(RecordType::Chunk, &payload)?;
        let s = &mut self.streams[pos];
        s.crc = crc32c::crc32c_append(s.crc, &payload);
        s.last_seq = Some(chunk.sequence_number);
        s.index.push(ChunkIndexEntry {
            offset,
            record_len: (payload.len() as u64 + format::RECORD_OVERHEAD) as u32,
            sequence_number: chunk.sequence_number,
            first_device_ts: chunk.first_device_ts,
            n_samples: chunk.n_samples() as u32,
        });
        self.maybe_flush()
    }

    pub fn append_marker(&mut self, marker: &EventMarker) -> Result<(), StoreError> {
        self.ensure_open()?;
        if let Some(&last) = self.last_marker_id.get(&marker.source) {
            if marker.marker_id <= last {
                return Err(StoreError::SequenceRegression {
                    stream_id: format!("markers:{}", marker.source),
                    last,
                    got: marker.marker_id,
                });
            }
        }
        let payload = serde_json::to_vec(marker)?;
        let offset = self.write_record(RecordType::Marker, &payload)?;
        self.marker_offsets.push(offset);
        self.last_marker_id.insert(marker.source.clone(), marker.marker_id);
        if !self.header.marker_sources.contains(&marker.source) {
            self.header.marker_sources.push(marker.source.clone());
        }
        self.maybe_flush()
    }

    /// Writes the manifest and footer. May only succeed once.
    pub fn finalize(&mut self) -> Result<SessionManifest, StoreError> {
        self.ensure_open()?;
        self.finalized = true;
        let manifest_offset = self.offset;
        let file_sha256 = hex::encode(self.sha.clone().finalize());
        let h = &self.header;
        let manifest = SessionManifest {
            session_id: h.session_id.clone(),
            created_host_ts: h.created_host_ts,
            descriptors: h.descriptors.clone(),
            marker_sources: h.marker_sources.clone(),
            chunk_index: h
                .descriptors
                .iter()
                .zip(&self.streams)
                .map(|(d, s)| (d.stream_id.clone(), s.index.clone()))
                .collect(),
            marker_offsets: self.marker_offsets.clone(),
            digests: SessionDigests {
                streams: h
                    .descriptors
                    .iter()
                    .zip(&self.streams)
                    .map(|(d, s)| (d.stream_id.clone(), format!("{:08x}", s.crc)))
                    .collect(),
                file_sha256,
            },
            metadata: h.metadata.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        self.write_record(RecordType::Manifest, &json)?;
        let mut footer = Vec::with_capacity(12);
        footer.extend_from_slice(&manifest_offset.to_le_bytes());
        footer.extend_from_slice(format::FOOTER_MAGIC);
        self.write_bytes(&footer)?;
        self.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(manifest)
    }
}

impl Drop for SessionWriter {
    fn drop(&mut self) {
        // Unfinalized sessions stay recoverable up to whatever reached the OS.
        let _ = self.out.flush();
    }
}
