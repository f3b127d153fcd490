use std::io::{ErrorKind, Read};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::wire::{self, Frame, FrameDecoder, WireDescriptor};
use super::{IngestError, Source, SourceHandle, SourceItem, SourceKind, StopToken};
use crate::clock::host_now;
use crate::markers::parse_marker_line;
use crate::model::{Chunk, DenyList, DeviceTs, Samples, StreamDescriptor};

#[derive(Clone, Debug)]
pub struct NetworkOptions {
    pub connect_timeout: Duration,
    /// Silence after which the source is declared FAILED.
    pub silence_timeout: Duration,
    /// Granularity at which a blocked read re-checks the stop token.
    pub poll_interval: Duration,
    /// Applied to marker payloads arriving on marker streams.
    pub marker_deny: DenyList,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(2),
            silence_timeout: Duration::from_secs(5),
            poll_interval: Duration::from_millis(50),
            marker_deny: DenyList::interpretative(),
        }
    }
}

/// A RUNNING OWP/1 connection to one remote stream.
pub struct NetworkSource {
    handle: SourceHandle,
    endpoint: String,
    stream: TcpStream,
    decoder: FrameDecoder,
    opts: NetworkOptions,
    last_heard: Instant,
    period_ns: u64,
    buf: Vec<u8>,
}

/// Connects to `endpoint`, validates the remote descriptor against
/// `descriptor` and acknowledges it.
///
/// On a mismatch the remote receives a NAK with the differences and the
/// call fails with [`IngestError::HandshakeMismatch`].
pub fn open_network_source(
    endpoint: &str,
    descriptor: StreamDescriptor,
    opts: NetworkOptions,
) -> Result<NetworkSource, IngestError> {
    let failed = |reason: String| IngestError::ConnectionFailed { endpoint: endpoint.to_string(), reason };
    let addrs: Vec<_> = endpoint.to_socket_addrs().map_err(|e| failed(e.to_string()))?.collect();
    let mut last_err = "no address resolved".to_string();
    let mut stream = None;
    for addr in addrs {
        match TcpStream::connect_timeout(&addr, opts.connect_timeout) {
            Ok(s) => {
                stream = Some(s);
                break;
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    let mut stream = stream.ok_or_else(|| failed(last_err))?;
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(opts.connect_timeout)).map_err(|e| failed(e.to_string()))?;

    let remote = wire::read_handshake(&mut stream).map_err(|e| failed(format!("handshake: {e}")))?;
    let local = WireDescriptor::from(&descriptor);
    let diff = remote.diff(&local);
    if !diff.is_empty() {
        let reason = diff.join("; ");
        wire::write_reply(&mut stream, Err(&reason)).ok();
        return Err(IngestError::HandshakeMismatch { endpoint: endpoint.to_string(), reason });
    }
    wire::write_reply(&mut stream, Ok(())).map_err(|e| failed(e.to_string()))?;
    stream.set_read_timeout(Some(opts.poll_interval)).map_err(|e| failed(e.to_string()))?;

    let mut handle = SourceHandle::new(descriptor, SourceKind::Network);
    handle.start()?;
    Ok(NetworkSource {
        decoder: FrameDecoder::new(handle.descriptor.n_channels(), handle.descriptor.value_encoding),
        period_ns: handle.descriptor.sample_period_ns().unwrap_or(0),
        handle,
        endpoint: endpoint.to_string(),
        stream,
        opts,
        last_heard: Instant::now(),
        buf: vec![0; 64 * 1024],
    })
}

impl NetworkSource {
    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn protocol(&self, reason: impl Into<String>) -> IngestError {
        IngestError::Protocol { stream_id: self.handle.descriptor.stream_id.clone(), reason: reason.into() }
    }

    fn to_item(&self, frame: Frame) -> Result<Option<SourceItem>, IngestError> {
        let desc = &self.handle.descriptor;
        match frame {
            Frame::Heartbeat { .. } => Ok(None),
            Frame::Chunk { sequence_number, first_device_ts_ns, n_samples, payload } => {
                if desc.is_marker() {
                    return Err(self.protocol("chunk frame on a marker stream"));
                }
                let samples =
                    Samples::from_le_bytes(desc.value_encoding, &payload).map_err(|e| self.protocol(e.to_string()))?;
                let chunk = Chunk {
                    stream_id: desc.stream_id.clone(),
                    sequence_number,
                    first_device_ts: DeviceTs::from_nanos(first_device_ts_ns),
                    sample_period_ns: self.period_ns,
                    per_sample_device_ts: None,
                    host_receipt_ts: host_now(),
                    n_channels: desc.n_channels(),
                    samples,
                };
                debug_assert_eq!(chunk.n_samples(), n_samples as usize);
                Ok(Some(SourceItem::Chunk(chunk)))
            }
            Frame::Marker { sequence_number, json, .. } => {
                let text = std::str::from_utf8(&json).map_err(|_| self.protocol("marker payload is not UTF-8"))?;
                let marker = parse_marker_line(text, sequence_number, &desc.stream_id, &self.opts.marker_deny)
                    .map_err(|e| self.protocol(e.to_string()))?;
                Ok(Some(SourceItem::Marker(marker)))
            }
        }
    }
}

impl Source for NetworkSource {
    fn handle(&self) -> &SourceHandle {
        &self.handle
    }

    fn handle_mut(&mut self) -> &mut SourceHandle {
        &mut self.handle
    }

    fn next_item(&mut self, stop: &StopToken) -> Result<Option<SourceItem>, IngestError> {
        loop {
            while let Some(frame) = self.decoder.next_frame().map_err(|e| self.protocol(e.to_string()))? {
                if let Some(item) = self.to_item(frame)? {
                    return Ok(Some(item));
                }
            }
            if stop.is_stopped() {
                return Ok(None);
            }
            match self.stream.read(&mut self.buf) {
                Ok(0) if self.decoder.buffered() == 0 => return Ok(None),
                Ok(0) => return Err(self.protocol("connection closed inside a frame")),
                Ok(n) => {
                    self.last_heard = Instant::now();
                    self.decoder.push(&self.buf[..n]);
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {
                    let silent = self.last_heard.elapsed();
                    if silent >= self.opts.silence_timeout {
                        return Err(IngestError::Silence {
                            stream_id: self.handle.descriptor.stream_id.clone(),
                            silent_ms: silent.as_millis() as u64,
                        });
                    }
                }
                Err(e) => return Err(self.protocol(e.to_string())),
            }
        }
    }
}
