//! Byte layout of the OSF1 container.
//!
//! ```text
//! file    := "OSF1" u16:version record* footer
//! record  := u8:type u32:len payload[len] u32:crc32c(type ‖ len ‖ payload)
//! footer  := u64:manifest_offset "OSFE"
//! ```
//!
//! Integers are little-endian. The first record is always the session
//! header; the manifest record sits at `manifest_offset`, directly before
//! the footer.

use std::collections::BTreeMap;
use std::io::{self, Read, Seek, SeekFrom};

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::model::{Chunk, DeviceTs, HostTs, Samples, StreamDescriptor, ValueEncoding};

pub const MAGIC: &[u8; 4] = b"OSF1";
pub const FOOTER_MAGIC: &[u8; 4] = b"OSFE";
pub const VERSION: u16 = 1;
pub const PREAMBLE_LEN: u64 = 6;
pub const FOOTER_LEN: u64 = 12;
/// type + length prefix
pub const RECORD_HEAD_LEN: u64 = 5;
pub const RECORD_OVERHEAD: u64 = RECORD_HEAD_LEN + 4;
/// Sanity cap on a single record; anything larger is treated as corruption.
pub const MAX_RECORD_LEN: u32 = 256 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum RecordType {
    Header = 0x01,
    Chunk = 0x02,
    Marker = 0x03,
    Manifest = 0x04,
}

impl RecordType {
    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(Self::Header),
            0x02 => Some(Self::Chunk),
            0x03 => Some(Self::Marker),
            0x04 => Some(Self::Manifest),
            _ => None,
        }
    }
}

/// Contents of the leading header record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub session_id: String,
    pub created_host_ts: HostTs,
    pub descriptors: Vec<StreamDescriptor>,
    pub marker_sources: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

pub fn record_crc(kind: u8, payload: &[u8]) -> u32 {
    let mut head = [0u8; 5];
    head[0] = kind;
    head[1..].copy_from_slice(&(payload.len() as u32).to_le_bytes());
    crc32c::crc32c_append(crc32c::crc32c(&head), payload)
}

pub fn encode_record(kind: RecordType, payload: &[u8], out: &mut Vec<u8>) {
    out.push(kind as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&record_crc(kind as u8, payload).to_le_bytes());
}

const CHUNK_FIXED_LEN: usize = 2 + 8 + 8 + 8 + 8 + 4 + 2 + 1 + 1;
const FLAG_PER_SAMPLE_TS: u8 = 0x01;

fn encoding_code(e: ValueEncoding) -> u8 {
    match e {
        ValueEncoding::Float32 => 0,
        ValueEncoding::Float64 => 1,
        ValueEncoding::Int32 => 2,
    }
}

fn encoding_from_code(c: u8) -> Option<ValueEncoding> {
    match c {
        0 => Some(ValueEncoding::Float32),
        1 => Some(ValueEncoding::Float64),
        2 => Some(ValueEncoding::Int32),
        _ => None,
    }
}

pub fn encode_chunk(stream_index: u16, chunk: &Chunk) -> Vec<u8> {
    let n = chunk.n_samples();
    let mut out = Vec::with_capacity(CHUNK_FIXED_LEN + chunk.samples.byte_len() + 8 * n);
    out.extend_from_slice(&stream_index.to_le_bytes());
    out.extend_from_slice(&chunk.sequence_number.to_le_bytes());
    out.extend_from_slice(&chunk.first_device_ts.nanos().to_le_bytes());
    out.extend_from_slice(&chunk.sample_period_ns.to_le_bytes());
    out.extend_from_slice(&chunk.host_receipt_ts.nanos().to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(chunk.n_channels as u16).to_le_bytes());
    out.push(encoding_code(chunk.samples.encoding()));
    match &chunk.per_sample_device_ts {
        Some(ts) => {
            out.push(FLAG_PER_SAMPLE_TS);
            ts.iter().for_each(|t| out.extend_from_slice(&t.nanos().to_le_bytes()));
        }
        None => out.push(0),
    }
    chunk.samples.write_le(&mut out);
    out
}

fn corrupt(offset: u64, reason: impl Into<String>) -> StoreError {
    StoreError::CorruptSession { offset, reason: reason.into() }
}

/// Decodes a chunk payload. `offset` is only used in error reports.
pub fn decode_chunk(payload: &[u8], descriptors: &[StreamDescriptor], offset: u64) -> Result<Chunk, StoreError> {
    if payload.len() < CHUNK_FIXED_LEN {
        return Err(corrupt(offset, "chunk record too short"));
    }
    let u16_at = |i: usize| u16::from_le_bytes(payload[i..i + 2].try_into().unwrap());
    let u64_at = |i: usize| u64::from_le_bytes(payload[i..i + 8].try_into().unwrap());
    let i64_at = |i: usize| i64::from_le_bytes(payload[i..i + 8].try_into().unwrap());
    let u32_at = |i: usize| u32::from_le_bytes(payload[i..i + 4].try_into().unwrap());

    let stream_index = u16_at(0) as usize;
    let desc = descriptors.get(stream_index).ok_or_else(|| corrupt(offset, "chunk references unknown stream"))?;
    let n = u32_at(34) as usize;
    let n_channels = u16_at(38) as usize;
    let encoding = encoding_from_code(payload[40]).ok_or_else(|| corrupt(offset, "unknown value encoding"))?;
    let flags = payload[41];

    let mut pos = CHUNK_FIXED_LEN;
    let per_sample_device_ts = if flags & FLAG_PER_SAMPLE_TS != 0 {
        let end = pos + 8 * n;
        if payload.len() < end {
            return Err(corrupt(offset, "chunk timestamps truncated"));
        }
        let ts = payload[pos..end]
            .chunks_exact(8)
            .map(|b| DeviceTs::from_nanos(i64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        pos = end;
        Some(ts)
    } else {
        None
    };
    if payload.len() - pos != n * n_channels * encoding.width() {
        return Err(corrupt(offset, "chunk sample block has the wrong size"));
    }
    let samples = Samples::from_le_bytes(encoding, &payload[pos..]).map_err(|e| corrupt(offset, e.to_string()))?;
    Ok(Chunk {
        stream_id: desc.stream_id.clone(),
        sequence_number: u64_at(2),
        first_device_ts: DeviceTs::from_nanos(i64_at(10)),
        sample_period_ns: u64_at(18),
        per_sample_device_ts,
        host_receipt_ts: HostTs::from_nanos(i64_at(26)),
        n_channels,
        samples,
    })
}

/// A record read back from disk with its CRC already checked.
#[derive(Debug)]
pub struct RawRecord {
    pub offset: u64,
    pub kind: RecordType,
    pub payload: Vec<u8>,
}

impl RawRecord {
    pub fn total_len(&self) -> u64 {
        RECORD_OVERHEAD + self.payload.len() as u64
    }
}

/// Reads and CRC-checks the record starting at `offset`.
///
/// `limit` bounds the readable region (records never extend past it).
pub fn read_record_at<R: Read + Seek>(r: &mut R, offset: u64, limit: u64) -> Result<RawRecord, StoreError> {
    if offset + RECORD_OVERHEAD > limit {
        return Err(corrupt(offset, "record header truncated"));
    }
    r.seek(SeekFrom::Start(offset))?;
    let mut head = [0u8; 5];
    read_exact_or_corrupt(r, &mut head, offset)?;
    let len = u32::from_le_bytes(head[1..5].try_into().unwrap());
    if len > MAX_RECORD_LEN || offset + RECORD_OVERHEAD + len as u64 > limit {
        return Err(corrupt(offset, "record length runs past end of data"));
    }
    let mut payload = vec![0u8; len as usize];
    read_exact_or_corrupt(r, &mut payload, offset)?;
    let mut crc = [0u8; 4];
    read_exact_or_corrupt(r, &mut crc, offset)?;
    if u32::from_le_bytes(crc) != record_crc(head[0], &payload) {
        return Err(corrupt(offset, "record CRC32C mismatch"));
    }
    let kind =
        RecordType::from_u8(head[0]).ok_or_else(|| corrupt(offset, format!("unknown record type {:#04x}", head[0])))?;
    Ok(RawRecord { offset, kind, payload })
}

fn read_exact_or_corrupt<R: Read>(r: &mut R, buf: &mut [u8], offset: u64) -> Result<(), StoreError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => corrupt(offset, "unexpected end of file"),
        _ => StoreError::Io(e),
    })
}

/// Checks the preamble and returns the format version.
pub fn read_preamble<R: Read + Seek>(r: &mut R) -> Result<u16, StoreError> {
    r.seek(SeekFrom::Start(0))?;
    let mut buf = [0u8; 6];
    read_exact_or_corrupt(r, &mut buf, 0)?;
    if &buf[..4] != MAGIC {
        return Err(corrupt(0, "bad magic"));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(corrupt(4, format!("unsupported version {version}")));
    }
    Ok(version)
}

/// Returns the manifest offset if the file ends with a plausible footer.
pub fn read_footer<R: Read + Seek>(r: &mut R, file_len: u64) -> Result<Option<u64>, StoreError> {
    if file_len < PREAMBLE_LEN + FOOTER_LEN {
        return Ok(None);
    }
    r.seek(SeekFrom::Start(file_len - FOOTER_LEN))?;
    let mut buf = [0u8; 12];
    r.read_exact(&mut buf)?;
    if &buf[8..] != FOOTER_MAGIC {
        return Ok(None);
    }
    let offset = u64::from_le_bytes(buf[..8].try_into().unwrap());
    if offset < PREAMBLE_LEN || offset + RECORD_OVERHEAD > file_len - FOOTER_LEN {
        return Ok(None);
    }
    Ok(Some(offset))
}
