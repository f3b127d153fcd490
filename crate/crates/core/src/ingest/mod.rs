//! Acquisition sources and the buffered acquisition loop.
//!
//! A [`Source`] produces chunks (or markers) for one stream. Three kinds
//! exist: [`NetworkSource`] speaks the OWP/1 protocol in [`wire`] to a device
//! or simulator, [`SynthSource`] generates deterministic test signals, and
//! [`ReplaySource`] re-emits a recorded session. [`run_acquisition`] runs one
//! producer thread per source and a single consumer that drains bounded
//! per-stream queues into an [`AcquisitionSink`], usually a
//! [`SessionWriter`](crate::store::SessionWriter).

mod acquire;
mod lines;
mod network;
mod replay;
mod synth;
pub mod wire;

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Chunk, EventMarker, StreamDescriptor};
use crate::store::StoreError;

pub use acquire::{
    run_acquisition, AcquisitionConfig, AcquisitionSink, AcquisitionStats, MemorySink, OverflowPolicy, StreamStats,
};
pub use lines::{line_marker_source, LineMarkerSource};
pub use network::{open_network_source, NetworkOptions, NetworkSource};
pub use replay::{replay_source, replay_stream_sources, ReplaySource, ReplaySpeed, ReplayStreamSource};
pub use synth::{
    default_chunk_len, default_signals, galea_synth_sources, synth_source, SignalSpec, SynthPacing, SynthSource,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("handshake mismatch with {endpoint}: {reason}")]
    HandshakeMismatch { endpoint: String, reason: String },
    #[error("connection to {endpoint} failed: {reason}")]
    ConnectionFailed { endpoint: String, reason: String },
    #[error("protocol error on {stream_id}: {reason}")]
    Protocol { stream_id: String, reason: String },
    #[error("{stream_id} silent for {silent_ms} ms")]
    Silence { stream_id: String, silent_ms: u64 },
    #[error("integrity failure: {0}")]
    IntegrityFailure(String),
    #[error("corrupt session at byte {offset}: {reason}")]
    CorruptSession { offset: u64, reason: String },
    #[error("sink failure: {0}")]
    SinkFailure(String),
    #[error("queue overflow on {0} under FAIL policy")]
    Overflow(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid state transition {from} -> {to}")]
    InvalidTransition { from: SourceState, to: SourceState },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceKind {
    Network,
    Synthetic,
    Replay,
    /// Marker lines from a pipe, FIFO or other byte stream.
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceState {
    Idle,
    Running,
    Stopped,
    Failed,
}

impl fmt::Display for SourceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceState::Idle => "IDLE",
            SourceState::Running => "RUNNING",
            SourceState::Stopped => "STOPPED",
            SourceState::Failed => "FAILED",
        })
    }
}

/// Identity and lifecycle of one source: IDLE -> RUNNING -> STOPPED | FAILED.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceHandle {
    pub descriptor: StreamDescriptor,
    pub kind: SourceKind,
    state: SourceState,
}

impl SourceHandle {
    pub fn new(descriptor: StreamDescriptor, kind: SourceKind) -> Self {
        Self { descriptor, kind, state: SourceState::Idle }
    }

    pub fn state(&self) -> SourceState {
        self.state
    }

    fn transition(&mut self, to: SourceState) -> Result<(), IngestError> {
        let ok = matches!(
            (self.state, to),
            (SourceState::Idle, SourceState::Running)
                | (SourceState::Running, SourceState::Stopped)
                | (SourceState::Running, SourceState::Failed)
        );
        if !ok {
            return Err(IngestError::InvalidTransition { from: self.state, to });
        }
        self.state = to;
        Ok(())
    }

    pub fn start(&mut self) -> Result<(), IngestError> {
        self.transition(SourceState::Running)
    }

    pub fn stop(&mut self) -> Result<(), IngestError> {
        self.transition(SourceState::Stopped)
    }

    pub fn fail(&mut self) -> Result<(), IngestError> {
        self.transition(SourceState::Failed)
    }

    /// Moves a running handle to its terminal state; no-op otherwise.
    pub(crate) fn finish(&mut self, failed: bool) {
        if self.state == SourceState::Running {
            self.state = if failed { SourceState::Failed } else { SourceState::Stopped };
        }
    }
}

/// One unit of acquired data.
#[derive(Clone, Debug, PartialEq)]
pub enum SourceItem {
    Chunk(Chunk),
    Marker(EventMarker),
}

/// Cooperative cancellation shared between the operator and every source.
#[derive(Clone, Debug, Default)]
pub struct StopToken(Arc<AtomicBool>);

impl StopToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// A producer of items for one stream.
///
/// `next_item` returns `Ok(None)` at the natural end of the stream or once
/// `stop` is set, and an error when the source has failed.
pub trait Source: Send {
    fn handle(&self) -> &SourceHandle;

    fn handle_mut(&mut self) -> &mut SourceHandle;

    fn next_item(&mut self, stop: &StopToken) -> Result<Option<SourceItem>, IngestError>;

    fn descriptor(&self) -> &StreamDescriptor {
        &self.handle().descriptor
    }

    fn kind(&self) -> SourceKind {
        self.handle().kind
    }
}
