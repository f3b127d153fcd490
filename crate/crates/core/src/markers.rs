//! Interaction markers: the newline-delimited JSON line protocol, task
//! script files, and a scripted harness that emits markers on schedule.
//!
//! A line looks like
//!
//! ```text
//! {"kind":"TASK_PROGRESSION","label":"level_complete","payload":{"level":"1-1"}}
//! ```
//!
//! with optional `device_ts_ns` and `host_ts_ns` integer fields. Any process
//! that can write such lines to a pipe or an OWP/1 marker frame can act as
//! an interaction source.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::host_now;
use crate::model::{DenyList, DeviceTs, EventMarker, HostTs, InteractionPrimitive, Payload, PrimitiveKind};

#[derive(Debug, Error)]
pub enum MarkerError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("policy violation: {0}")]
    PolicyViolation(String),
    #[error("invalid task script: {0}")]
    Validation(String),
    #[error("marker sink failed: {0}")]
    Sink(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Wire shape of one marker line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkerLine {
    kind: PrimitiveKind,
    #[serde(default)]
    label: String,
    #[serde(default)]
    payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    device_ts_ns: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    host_ts_ns: Option<i64>,
}

/// Parses one marker line.
///
/// `host_ts` is taken from the line when present, otherwise stamped now.
pub fn parse_marker_line(
    text: &str,
    marker_id: u64,
    source: &str,
    deny: &DenyList,
) -> Result<EventMarker, MarkerError> {
    let line: MarkerLine =
        serde_json::from_str(text.trim_end_matches(['\r', '\n'])).map_err(|e| MarkerError::Parse(e.to_string()))?;
    let primitive = InteractionPrimitive { kind: line.kind, label: line.label, payload: line.payload };
    primitive.check_policy(deny).map_err(|e| MarkerError::PolicyViolation(e.to_string()))?;
    Ok(EventMarker {
        marker_id,
        primitive,
        device_ts: line.device_ts_ns.map(DeviceTs::from_nanos),
        host_ts: line.host_ts_ns.map(HostTs::from_nanos).unwrap_or_else(host_now),
        source: source.to_string(),
    })
}

/// Serializes a marker into one line (without the trailing newline).
pub fn marker_to_line(marker: &EventMarker) -> String {
    let line = MarkerLine {
        kind: marker.primitive.kind,
        label: marker.primitive.label.clone(),
        payload: marker.primitive.payload.clone(),
        device_ts_ns: marker.device_ts.map(|t| t.nanos()),
        host_ts_ns: Some(marker.host_ts.nanos()),
    };
    serde_json::to_string(&line).expect("marker lines always serialize")
}

/// Stateful line parser for one source: assigns dense, increasing marker ids.
#[derive(Debug)]
pub struct MarkerDecoder {
    source: String,
    next_id: u64,
    deny: DenyList,
}

impl MarkerDecoder {
    pub fn new(source: impl Into<String>, deny: DenyList) -> Self {
        Self { source: source.into(), next_id: 0, deny }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn parse_line(&mut self, text: &str) -> Result<EventMarker, MarkerError> {
        let m = parse_marker_line(text, self.next_id, &self.source, &self.deny)?;
        self.next_id += 1;
        Ok(m)
    }
}

/// Reads marker lines from any buffered reader (file, FIFO, socket).
/// Blank lines are skipped.
pub fn read_marker_lines<R: BufRead>(reader: R, decoder: &mut MarkerDecoder) -> Result<Vec<EventMarker>, MarkerError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(decoder.parse_line(&line)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Task scripts

/// One scheduled primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledPrimitive {
    pub at_s: f64,
    pub primitive: InteractionPrimitive,
}

/// A deterministic sequence of interaction primitives.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskScript {
    pub total_duration_s: f64,
    pub events: Vec<ScheduledPrimitive>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    total_duration_s: f64,
    events: Vec<ScriptEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptEntry {
    at_s: f64,
    kind: PrimitiveKind,
    #[serde(default)]
    label: String,
    #[serde(default)]
    payload: Payload,
}

impl TaskScript {
    pub fn new(total_duration_s: f64, events: Vec<ScheduledPrimitive>) -> Result<Self, MarkerError> {
        let s = Self { total_duration_s, events };
        s.validate(&DenyList::interpretative())?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self, deny: &DenyList) -> Result<(), MarkerError> {
        if !(self.total_duration_s.is_finite() && self.total_duration_s >= 0.0) {
            return Err(MarkerError::Validation("total_duration_s must be a non-negative number".into()));
        }
        let mut prev = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            if !e.at_s.is_finite() || e.at_s < 0.0 || e.at_s > self.total_duration_s {
                return Err(MarkerError::Validation(format!(
                    "event {i} at {} s is outside [0, {}]",
                    e.at_s, self.total_duration_s
                )));
            }
            if e.at_s < prev {
                return Err(MarkerError::Validation(format!("event {i} at {} s comes before {prev} s", e.at_s)));
            }
            prev = e.at_s;
            e.primitive.check_policy(deny).map_err(|e| MarkerError::PolicyViolation(e.to_string()))?;
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, MarkerError> {
        let f: ScriptFile = serde_json::from_str(text).map_err(|e| MarkerError::Parse(e.to_string()))?;
        let script = TaskScript {
            total_duration_s: f.total_duration_s,
            events: f
                .events
                .into_iter()
                .map(|e| ScheduledPrimitive {
                    at_s: e.at_s,
                    primitive: InteractionPrimitive { kind: e.kind, label: e.label, payload: e.payload },
                })
                .collect(),
        };
        script.validate(&DenyList::interpretative())?;
        Ok(script)
    }

    pub fn to_json_string(&self) -> String {
        let f = ScriptFile {
            total_duration_s: self.total_duration_s,
            events: self
                .events
                .iter()
                .map(|e| ScriptEntry {
                    at_s: e.at_s,
                    kind: e.primitive.kind,
                    label: e.primitive.label.clone(),
                    payload: e.primitive.payload.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&f).expect("scripts always serialize")
    }
}

pub fn load_task_script(path: impl AsRef<Path>) -> Result<TaskScript, MarkerError> {
    TaskScript::from_json_str(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Sinks and the harness

/// Destination for emitted markers. Shared by concurrent sources, hence `&self`.
pub trait MarkerSink: Send + Sync {
    fn emit(&self, marker: EventMarker) -> Result<(), MarkerError>;
}

/// Collects markers in memory.
#[derive(Debug, Default)]
pub struct VecSink(Mutex<Vec<EventMarker>>);

impl VecSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn take(&self) -> Vec<EventMarker> {
        std::mem::take(&mut *self.0.lock().unwrap())
    }
}

impl MarkerSink for VecSink {
    fn emit(&self, marker: EventMarker) -> Result<(), MarkerError> {
        self.0.lock().map_err(|_| MarkerError::Sink("poisoned".into()))?.push(marker);
        Ok(())
    }
}

/// Writes markers as lines to any writer (stdout, a file, a FIFO, a socket).
pub struct LineSink<W: Write + Send>(Mutex<W>);

impl<W: Write + Send> LineSink<W> {
    pub fn new(w: W) -> Self {
        Self(Mutex::new(w))
    }

    pub fn into_inner(self) -> W {
        self.0.into_inner().unwrap_or_else(|p| p.into_inner())
    }
}

impl<W: Write + Send> MarkerSink for LineSink<W> {
    fn emit(&self, marker: EventMarker) -> Result<(), MarkerError> {
        let mut w = self.0.lock().map_err(|_| MarkerError::Sink("poisoned".into()))?;
        writeln!(w, "{}", marker_to_line(&marker)).and_then(|_| w.flush()).map_err(|e| MarkerError::Sink(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pacing {
    /// Sleep until each event is due and stamp the real host clock.
    RealTime,
    /// Emit immediately with host stamps synthesized from the schedule.
    Unpaced,
}

/// Emits every scripted primitive to `sink` and returns how many were sent.
///
/// Marker ids run 0, 1, 2, ... in schedule order.
pub fn run_task_harness(
    script: &TaskScript,
    sink: &dyn MarkerSink,
    pacing: Pacing,
    source: &str,
) -> Result<usize, MarkerError> {
    let start_host = host_now();
    let start = Instant::now();
    for (i, e) in script.events.iter().enumerate() {
        let offset_ns = (e.at_s * 1e9).round() as i64;
        let host_ts = match pacing {
            Pacing::Unpaced => start_host + offset_ns,
            Pacing::RealTime => {
                let due = Duration::from_nanos(offset_ns as u64);
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    std::thread::sleep(wait);
                }
                host_now()
            }
        };
        sink.emit(EventMarker {
            marker_id: i as u64,
            primitive: e.primitive.clone(),
            device_ts: None,
            host_ts,
            source: source.to_string(),
        })?;
    }
    Ok(script.len())
}

/// Reads a marker line stream on a background thread and forwards parsed
/// markers to `sink`; malformed or policy-violating lines are logged and
/// skipped.
pub fn spawn_line_reader<R, S>(reader: R, mut decoder: MarkerDecoder, sink: S) -> std::thread::JoinHandle<usize>
where
    R: std::io::Read + Send + 'static,
    S: MarkerSink + 'static,
{
    std::thread::spawn(move || {
        let mut n = 0;
        for line in BufReader::new(reader).lines() {
            let Ok(line) = line else { break };
            if line.trim().is_empty() {
                continue;
            }
            match decoder.parse_line(&line) {
                Ok(m) => {
                    if sink.emit(m).is_err() {
                        break;
                    }
                    n += 1;
                }
                Err(e) => log::warn!("dropping marker line from {}: {e}", decoder.source()),
            }
        }
        n
    })
}
