//! OWP/1: the framed TCP protocol between a device (or simulator) and the
//! recorder. All integers are little-endian.
//!
//! ```text
//! handshake (device -> recorder):  "OWP1" u32:len descriptor-json[len]
//! reply     (recorder -> device):  "ACK\0" | "NAK\0" u32:len reason[len]
//! frame:    u8:type u64:seq i64:first_device_ts_ns u32:n_samples u32:crc32(payload) payload
//! ```
//!
//! Frame types are `0x01` chunk, `0x02` marker, `0x03` heartbeat. A chunk
//! payload is `n_samples x n_channels` values in the declared encoding. For
//! marker frames `n_samples` holds the byte length of the UTF-8 JSON
//! payload; heartbeats carry no payload.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::model::{Modality, StreamDescriptor, ValueEncoding};

pub const MAGIC: &[u8; 4] = b"OWP1";
pub const ACK: &[u8; 4] = b"ACK\0";
pub const NAK: &[u8; 4] = b"NAK\0";
pub const FRAME_HEADER_LEN: usize = 1 + 8 + 8 + 4 + 4;
/// Upper bound on handshake JSON and marker payloads.
pub const MAX_JSON_LEN: u32 = 1 << 20;

pub const FRAME_CHUNK: u8 = 0x01;
pub const FRAME_MARKER: u8 = 0x02;
pub const FRAME_HEARTBEAT: u8 = 0x03;

/// The descriptor fields exchanged during the handshake.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireDescriptor {
    pub stream_id: String,
    pub modality: Modality,
    pub channel_labels: Vec<String>,
    pub nominal_rate_hz: Option<f64>,
    pub value_encoding: ValueEncoding,
}

impl From<&StreamDescriptor> for WireDescriptor {
    fn from(d: &StreamDescriptor) -> Self {
        Self {
            stream_id: d.stream_id.clone(),
            modality: d.modality,
            channel_labels: d.channel_labels.clone(),
            nominal_rate_hz: d.nominal_rate_hz,
            value_encoding: d.value_encoding,
        }
    }
}

impl WireDescriptor {
    /// Human-readable list of differences, empty when they agree.
    pub fn diff(&self, local: &WireDescriptor) -> Vec<String> {
        let mut out = Vec::new();
        if self.stream_id != local.stream_id {
            out.push(format!("stream_id {:?} != {:?}", self.stream_id, local.stream_id));
        }
        if self.modality != local.modality {
            out.push(format!("modality {} != {}", self.modality, local.modality));
        }
        if self.channel_labels.len() != local.channel_labels.len() {
            out.push(format!("{} channels != {}", self.channel_labels.len(), local.channel_labels.len()));
        } else if self.channel_labels != local.channel_labels {
            out.push("channel labels differ".to_string());
        }
        if self.nominal_rate_hz != local.nominal_rate_hz {
            out.push(format!("rate {:?} != {:?}", self.nominal_rate_hz, local.nominal_rate_hz));
        }
        if self.value_encoding != local.value_encoding {
            out.push(format!("encoding {:?} != {:?}", self.value_encoding, local.value_encoding));
        }
        out
    }
}

pub fn write_handshake<W: Write>(w: &mut W, desc: &WireDescriptor) -> io::Result<()> {
    let json = serde_json::to_vec(desc)?;
    let mut buf = Vec::with_capacity(8 + json.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    w.write_all(&buf)?;
    w.flush()
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_handshake<R: Read>(r: &mut R) -> io::Result<WireDescriptor> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(invalid("peer does not speak OWP/1"));
    }
    let len = u32::from_le_bytes(head[4..].try_into().unwrap());
    if len > MAX_JSON_LEN {
        return Err(invalid("handshake descriptor too large"));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| invalid(format!("bad handshake descriptor: {e}")))
}

pub fn write_reply<W: Write>(w: &mut W, verdict: Result<(), &str>) -> io::Result<()> {
    match verdict {
        Ok(()) => w.write_all(ACK)?,
        Err(reason) => {
            w.write_all(NAK)?;
            w.write_all(&(reason.len() as u32).to_le_bytes())?;
            w.write_all(reason.as_bytes())?;
        }
    }
    w.flush()
}

/// `Ok(Ok(()))` on ACK, `Ok(Err(reason))` on NAK.
pub fn read_reply<R: Read>(r: &mut R) -> io::Result<Result<(), String>> {
    let mut tag = [0u8; 4];
    r.read_exact(&mut tag)?;
    if &tag == ACK {
        return Ok(Ok(()));
    }
    if &tag != NAK {
        return Err(invalid("expected ACK or NAK"));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_JSON_LEN {
        return Err(invalid("NAK reason too long"));
    }
    let mut reason = vec![0u8; len as usize];
    r.read_exact(&mut reason)?;
    Ok(Err(String::from_utf8_lossy(&reason).into_owned()))
}

/// A decoded data frame.
#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    Chunk { sequence_number: u64, first_device_ts_ns: i64, n_samples: u32, payload: Vec<u8> },
    Marker { sequence_number: u64, device_ts_ns: i64, json: Vec<u8> },
    Heartbeat { sequence_number: u64 },
}

impl Frame {
    pub fn encode(&self, out: &mut Vec<u8>) {
        let (t, seq, ts, n, payload): (u8, u64, i64, u32, &[u8]) = match self {
            Frame::Chunk { sequence_number, first_device_ts_ns, n_samples, payload } => {
                (FRAME_CHUNK, *sequence_number, *first_device_ts_ns, *n_samples, payload)
            }
            Frame::Marker { sequence_number, device_ts_ns, json } => {
                (FRAME_MARKER, *sequence_number, *device_ts_ns, json.len() as u32, json)
            }
            Frame::Heartbeat { sequence_number } => (FRAME_HEARTBEAT, *sequence_number, 0, 0, &[]),
        };
        out.push(t);
        out.extend_from_slice(&seq.to_le_bytes());
        out.extend_from_slice(&ts.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        out.extend_from_slice(payload);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode(&mut out);
        out
    }
}

/// Errors from [`FrameDecoder`].
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
    #[error("payload CRC32 mismatch on frame {0}")]
    Crc(u64),
    #[error("frame payload too large")]
    TooLarge,
}

/// Incremental frame parser that tolerates reads split at any byte.
#[derive(Debug)]
pub struct FrameDecoder {
    /// Bytes per sample row; fixes the chunk payload length.
    row_bytes: usize,
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new(n_channels: usize, encoding: ValueEncoding) -> Self {
        Self { row_bytes: n_channels * encoding.width(), buf: Vec::new() }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete frame, or `None` when more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameError> {
        if self.buf.len() < FRAME_HEADER_LEN {
            return Ok(None);
        }
        let b = &self.buf;
        let t = b[0];
        let seq = u64::from_le_bytes(b[1..9].try_into().unwrap());
        let ts = i64::from_le_bytes(b[9..17].try_into().unwrap());
        let n = u32::from_le_bytes(b[17..21].try_into().unwrap());
        let crc = u32::from_le_bytes(b[21..25].try_into().unwrap());
        let payload_len = match t {
            FRAME_CHUNK => n as usize * self.row_bytes,
            FRAME_MARKER if n > MAX_JSON_LEN => return Err(FrameError::TooLarge),
            FRAME_MARKER => n as usize,
            FRAME_HEARTBEAT => 0,
            other => return Err(FrameError::UnknownType(other)),
        };
        if payload_len > 64 * 1024 * 1024 {
            return Err(FrameError::TooLarge);
        }
        let total = FRAME_HEADER_LEN + payload_len;
        if self.buf.len() < total {
            return Ok(None);
        }
        let payload: Vec<u8> = self.buf[FRAME_HEADER_LEN..total].to_vec();
        self.buf.drain(..total);
        if crc32fast::hash(&payload) != crc {
            return Err(FrameError::Crc(seq));
        }
        Ok(Some(match t {
            FRAME_CHUNK => Frame::Chunk { sequence_number: seq, first_device_ts_ns: ts, n_samples: n, payload },
            FRAME_MARKER => Frame::Marker { sequence_number: seq, device_ts_ns: ts, json: payload },
            _ => Frame::Heartbeat { sequence_number: seq },
        }))
    }
}
