//! A device emulator that serves the Galea Beta stream set (or any custom
//! descriptors) over OWP/1, one TCP connection per stream, with injectable
//! clock skew, clock offset, timestamp jitter and dropouts.
//!
//! The device model: sample `k` of a stream carries the device timestamp
//! `offset + k * period`, and the device clock runs `1 + skew` times as fast
//! as the host clock, so that sample is due on the host
//! `k * period / (1 + skew)` after the common start instant `t0`. Jitter
//! perturbs each frame's first timestamp. Dropout windows are expressed in
//! device time since the first sample.
//!
//! Everything except the host start instant is a pure function of the
//! configuration and seed, and the same generator backs both the network
//! server and the in-process sources used for fast tests.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::host_now;
use crate::ingest::wire::{self, Frame, WireDescriptor};
use crate::ingest::{
    default_chunk_len, default_signals, synth_source, IngestError, Source, SourceHandle, SourceItem, SourceKind,
    StopToken, SynthSource,
};
use crate::model::{
    galea_beta_descriptors, Chunk, DeviceTs, EventMarker, HostTs, InteractionPrimitive, Payload, PrimitiveKind,
    Samples, StreamDescriptor,
};

/// Stream id of the simulator's marker connection.
pub const MARKER_STREAM_ID: &str = "sim-markers";
/// Idle interval after which a heartbeat frame is sent.
pub const HEARTBEAT_INTERVAL: Duration = Duration::from_secs(1);

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    ConfigInvalid(String),
    #[error("cannot bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::ConfigInvalid(msg.into())
}

/// Samples whose device time since the first sample falls in
/// `[start_s, start_s + duration_s)` are lost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutWindow {
    pub start_s: f64,
    pub duration_s: f64,
    /// Restricts the window to one stream; all data streams otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
}

impl DropoutWindow {
    pub fn new(start_s: f64, duration_s: f64) -> Self {
        Self { start_s, duration_s, stream: None }
    }

    pub fn on(mut self, stream: impl Into<String>) -> Self {
        self.stream = Some(stream.into());
        self
    }

    fn applies_to(&self, stream_id: &str) -> bool {
        self.stream.as_deref().is_none_or(|s| s == stream_id)
    }

    fn bounds_ns(&self) -> (i64, i64) {
        let start = (self.start_s * 1e9).round() as i64;
        (start, start + (self.duration_s * 1e9).round() as i64)
    }
}

/// `START:DURATION` or `START:DURATION:STREAM`, in seconds.
impl FromStr for DropoutWindow {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |v: &str| v.parse::<f64>().map_err(|_| invalid(format!("bad dropout window {s:?}")));
        match parts.as_slice() {
            [a, b] => Ok(Self::new(num(a)?, num(b)?)),
            [a, b, id] if !id.is_empty() => Ok(Self::new(num(a)?, num(b)?).on(*id)),
            _ => Err(invalid(format!("bad dropout window {s:?}, expected START:DURATION[:STREAM]"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub clock_skew_ppm: f64,
    pub clock_offset_ms: f64,
    pub timestamp_jitter_ms: f64,
    #[serde(default)]
    pub dropout_windows: Vec<DropoutWindow>,
    pub seed: u64,
    /// Hold frames back until a window ends instead of losing them.
    #[serde(default)]
    pub stall: bool,
}

impl FaultSpec {
    pub fn seeded(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// Checks parameter ranges and that windows applying to a common stream
    /// neither overlap nor leave `[0, duration_s]`.
    pub fn validate(&self, duration_s: f64, stream_ids: &[&str]) -> Result<(), SimError> {
        if !self.clock_skew_ppm.is_finite() || self.clock_skew_ppm <= -1e6 {
            return Err(invalid("clock skew must be finite and above -1e6 ppm"));
        }
        if !self.clock_offset_ms.is_finite() {
            return Err(invalid("clock offset must be finite"));
        }
        if !(self.timestamp_jitter_ms.is_finite() && self.timestamp_jitter_ms >= 0.0) {
            return Err(invalid("jitter must be finite and non-negative"));
        }
        for w in &self.dropout_windows {
            if !(w.start_s.is_finite() && w.duration_s.is_finite() && w.start_s >= 0.0 && w.duration_s > 0.0) {
                return Err(invalid(format!("dropout window {w:?} needs start >= 0 and duration > 0")));
            }
            if w.start_s + w.duration_s > duration_s + 1e-9 {
                return Err(invalid(format!("dropout window {w:?} extends past the session end")));
            }
            if let Some(id) = &w.stream {
                if !stream_ids.contains(&id.as_str()) {
                    return Err(invalid(format!("dropout window names unknown stream {id:?}")));
                }
            }
        }
        for id in stream_ids {
            let mut ws: Vec<(i64, i64)> =
                self.dropout_windows.iter().filter(|w| w.applies_to(id)).map(DropoutWindow::bounds_ns).collect();
            ws.sort();
            if ws.windows(2).any(|p| p[1].0 < p[0].1) {
                return Err(invalid(format!("dropout windows overlap on {id}")));
            }
        }
        Ok(())
    }
}

/// What to simulate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub profile: String,
    pub descriptors: Vec<StreamDescriptor>,
    pub duration_s: f64,
    pub faults: FaultSpec,
    /// Number of TIMING_EVENT markers planted at random samples.
    pub marker_count: usize,
    /// Stream whose samples the markers are planted on.
    pub marker_stream: String,
    /// Target chunk duration; the per-stream chunk length is rounded from it.
    pub chunk_duration_s: f64,
}

impl SimConfig {
    pub fn galea_beta(duration_s: f64, faults: FaultSpec) -> Self {
        Self {
            profile: "galea-beta".into(),
            descriptors: galea_beta_descriptors(),
            duration_s,
            faults,
            marker_count: 10,
            marker_stream: "eeg".into(),
            chunk_duration_s: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("duration must be positive"));
        }
        if !(self.chunk_duration_s.is_finite() && self.chunk_duration_s > 0.0) {
            return Err(invalid("chunk duration must be positive"));
        }
        if self.descriptors.is_empty() {
            return Err(invalid("no streams to serve"));
        }
        for d in &self.descriptors {
            if d.is_marker() || d.sample_period_ns().is_none() {
                return Err(invalid(format!("{} is not a sampled stream", d.stream_id)));
            }
            if d.stream_id == MARKER_STREAM_ID {
                return Err(invalid(format!("{MARKER_STREAM_ID} is reserved")));
            }
        }
        if self.marker_count > 0 && !self.descriptors.iter().any(|d| d.stream_id == self.marker_stream) {
            return Err(invalid(format!("marker stream {:?} is not simulated", self.marker_stream)));
        }
        let ids: Vec<&str> = self.descriptors.iter().map(|d| d.stream_id.as_str()).collect();
        self.faults.validate(self.duration_s, &ids)
    }

    fn chunk_len(&self, d: &StreamDescriptor) -> usize {
        let rate = d.nominal_rate_hz.unwrap_or(1.0);
        if (self.chunk_duration_s - 0.1).abs() < 1e-12 {
            default_chunk_len(d)
        } else {
            (rate * self.chunk_duration_s).round().max(1.0) as usize
        }
    }

    fn skew_factor(&self) -> f64 {
        1.0 + self.faults.clock_skew_ppm * 1e-6
    }

    fn offset_ns(&self) -> i64 {
        (self.faults.clock_offset_ms * 1e6).round() as i64
    }

    fn stream_seed(&self, i: usize, salt: u64) -> u64 {
        self.faults.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64).wrapping_add(salt << 32)
    }

    fn windows_ns(&self, stream_id: &str) -> Vec<(i64, i64)> {
        self.faults.dropout_windows.iter().filter(|w| w.applies_to(stream_id)).map(DropoutWindow::bounds_ns).collect()
    }

    fn total_samples(&self, d: &StreamDescriptor) -> u64 {
        (self.duration_s * d.nominal_rate_hz.unwrap_or(0.0)).round() as u64
    }
}

/// Ground truth written when a simulation ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatorReport {
    pub profile: String,
    pub duration_s: f64,
    pub faults: FaultSpec,
    /// Host instant at which every stream's sample 0 was due.
    pub t0_host_ns: i64,
    pub streams: BTreeMap<String, ServedStream>,
    pub marker_stream_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_endpoint: Option<String>,
    pub planted_markers: Vec<PlantedMarker>,
    pub markers_emitted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServedStream {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub n_channels: usize,
    pub nominal_rate_hz: f64,
    pub period_ns: u64,
    pub chunk_len: usize,
    /// Device timestamp of sample 0.
    pub device_origin_ns: i64,
    pub samples_emitted: u64,
    pub samples_dropped: u64,
    pub frames_emitted: u64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedMarker {
    pub marker_id: u64,
    pub stream_id: String,
    pub sample_index: u64,
    pub device_ts_ns: i64,
    /// Ideal host time of the planted sample.
    pub host_ts_ns: i64,
}

impl SimulatorReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

// ---------------------------------------------------------------------------
// Deterministic frame generation

/// A data chunk and the host-relative instant it is due.
#[derive(Clone, Debug, PartialEq)]
pub struct SimFrame {
    pub due_ns: i64,
    /// `host_receipt_ts` is left at zero.
    pub chunk: Chunk,
}

/// Host-relative due time of sample `k`.
fn host_offset(k: u64, period_ns: u64, skew_factor: f64) -> i64 {
    ((k as f64 * period_ns as f64) / skew_factor).round() as i64
}

/// Generates one stream's frames in emission order.
pub struct StreamGen {
    synth: SynthSource,
    period_ns: u64,
    chunk_len: u64,
    skew_factor: f64,
    origin_ns: i64,
    jitter_ns: i64,
    jitter_rng: ChaCha8Rng,
    windows: Vec<(i64, i64)>,
    stall: bool,
    slot: u64,
    seq: u64,
    pending: VecDeque<SimFrame>,
    pub samples_emitted: u64,
    pub samples_dropped: u64,
}

impl StreamGen {
    /// Generator for the `i`-th configured stream.
    pub fn for_stream(config: &SimConfig, i: usize) -> Result<Self, SimError> {
        let d = &config.descriptors[i];
        let chunk_len = config.chunk_len(d);
        let synth = synth_source(d.clone(), default_signals(d), config.duration_s, chunk_len, config.stream_seed(i, 1))
            .map_err(|e| invalid(e.to_string()))?;
        Ok(Self {
            period_ns: d.sample_period_ns().expect("validated"),
            chunk_len: chunk_len as u64,
            synth,
            skew_factor: config.skew_factor(),
            origin_ns: config.offset_ns(),
            jitter_ns: (config.faults.timestamp_jitter_ms * 1e6).round() as i64,
            jitter_rng: ChaCha8Rng::seed_from_u64(config.stream_seed(i, 2)),
            windows: config.windows_ns(&d.stream_id),
            stall: config.faults.stall,
            slot: 0,
            seq: 0,
            pending: VecDeque::new(),
            samples_emitted: 0,
            samples_dropped: 0,
        })
    }

    fn in_window(&self, k: u64) -> Option<(i64, i64)> {
        let t = (k * self.period_ns) as i64;
        self.windows.iter().copied().find(|&(a, b)| a <= t && t < b)
    }

    fn due(&self, k: u64) -> i64 {
        host_offset(k, self.period_ns, self.skew_factor)
    }

    fn frame(&mut self, template: &Chunk, k0: u64, from: usize, to: usize) -> Chunk {
        let nch = template.n_channels;
        let values: Vec<f64> = (from * nch..to * nch).map(|j| template.samples.get_f64(j)).collect();
        let jitter = if self.jitter_ns > 0 { self.jitter_rng.gen_range(-self.jitter_ns..=self.jitter_ns) } else { 0 };
        let chunk = Chunk {
            stream_id: template.stream_id.clone(),
            sequence_number: self.seq,
            first_device_ts: DeviceTs::from_nanos(
                self.origin_ns + ((k0 + from as u64) * self.period_ns) as i64 + jitter,
            ),
            sample_period_ns: self.period_ns,
            per_sample_device_ts: None,
            host_receipt_ts: HostTs::from_nanos(0),
            n_channels: nch,
            samples: Samples::from_f64(template.samples.encoding(), values),
        };
        self.seq += 1;
        chunk
    }
}

impl Iterator for StreamGen {
    type Item = SimFrame;

    fn next(&mut self) -> Option<SimFrame> {
        loop {
            if let Some(f) = self.pending.pop_front() {
                return Some(f);
            }
            let template = self.synth.next()?;
            let k0 = self.slot * self.chunk_len;
            self.slot += 1;
            let n = template.n_samples();

            if self.stall || self.windows.is_empty() {
                let last = k0 + n as u64 - 1;
                let mut due = self.due(last);
                if let Some((_, end)) = self.in_window(last) {
                    due = due.max((end as f64 / self.skew_factor).round() as i64);
                }
                let chunk = self.frame(&template, k0, 0, n);
                self.samples_emitted += n as u64;
                return Some(SimFrame { due_ns: due, chunk });
            }

            // split the slot into runs of surviving samples
            let keep: Vec<bool> = (0..n).map(|j| self.in_window(k0 + j as u64).is_none()).collect();
            let mut j = 0;
            let mut runs = Vec::new();
            while j < n {
                if !keep[j] {
                    j += 1;
                    continue;
                }
                let start = j;
                while j < n && keep[j] {
                    j += 1;
                }
                runs.push((start, j));
            }
            let kept: usize = runs.iter().map(|(a, b)| b - a).sum();
            self.samples_emitted += kept as u64;
            self.samples_dropped += (n - kept) as u64;
            if runs.is_empty() {
                // a fully suppressed frame still consumes its sequence number
                self.seq += 1;
                continue;
            }
            for (a, b) in runs {
                let due = self.due(k0 + b as u64 - 1);
                let chunk = self.frame(&template, k0, a, b);
                self.pending.push_back(SimFrame { due_ns: due, chunk });
            }
        }
    }
}

/// A planted marker and the host-relative instant its frame is due.
#[derive(Clone, Debug, PartialEq)]
pub struct SimMarker {
    pub due_ns: i64,
    pub planted: PlantedMarker,
}

impl SimMarker {
    /// The marker line carried in the OWP/1 marker frame.
    pub fn json(&self) -> Vec<u8> {
        serde_json::to_vec(&serde_json::json!({
            "kind": "TIMING_EVENT",
            "label": "planted",
            "payload": {},
            "device_ts_ns": self.planted.device_ts_ns,
        }))
        .expect("static shape")
    }

    pub fn to_event(&self, host_ts: HostTs) -> EventMarker {
        EventMarker {
            marker_id: self.planted.marker_id,
            primitive: InteractionPrimitive::new(PrimitiveKind::TimingEvent, "planted").with_payload(Payload::new()),
            device_ts: Some(DeviceTs::from_nanos(self.planted.device_ts_ns)),
            host_ts,
            source: MARKER_STREAM_ID.to_string(),
        }
    }
}

/// Chooses marker sample indices (never inside a dropout window) and the
/// instants their frames are sent: right after the chunk slot holding the
/// planted sample.
pub fn plan_markers(config: &SimConfig, t0_host_ns: i64) -> Result<Vec<SimMarker>, SimError> {
    if config.marker_count == 0 {
        return Ok(Vec::new());
    }
    let (i, d) = config
        .descriptors
        .iter()
        .enumerate()
        .find(|(_, d)| d.stream_id == config.marker_stream)
        .ok_or_else(|| invalid("marker stream not simulated"))?;
    let period = d.sample_period_ns().expect("validated");
    let total = config.total_samples(d);
    let chunk_len = config.chunk_len(d) as u64;
    let windows = config.windows_ns(&d.stream_id);
    let candidates: Vec<u64> = (0..total)
        .filter(|&k| {
            let t = (k * period) as i64;
            config.faults.stall || !windows.iter().any(|&(a, b)| a <= t && t < b)
        })
        .collect();
    if candidates.len() < config.marker_count {
        return Err(invalid("more markers than available samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.stream_seed(i, 3));
    let mut picks: Vec<u64> =
        index::sample(&mut rng, candidates.len(), config.marker_count).into_iter().map(|j| candidates[j]).collect();
    picks.sort_unstable();
    let sf = config.skew_factor();
    Ok(picks
        .into_iter()
        .enumerate()
        .map(|(id, k)| {
            let slot_last = ((k / chunk_len + 1) * chunk_len).min(total) - 1;
            SimMarker {
                due_ns: host_offset(slot_last, period, sf),
                planted: PlantedMarker {
                    marker_id: id as u64,
                    stream_id: d.stream_id.clone(),
                    sample_index: k,
                    device_ts_ns: config.offset_ns() + (k * period) as i64,
                    host_ts_ns: t0_host_ns + host_offset(k, period, sf),
                },
            }
        })
        .collect())
}

fn base_report(config: &SimConfig, t0_host_ns: i64, markers: &[SimMarker]) -> SimulatorReport {
    SimulatorReport {
        profile: config.profile.clone(),
        duration_s: config.duration_s,
        faults: config.faults.clone(),
        t0_host_ns,
        streams: config
            .descriptors
            .iter()
            .map(|d| {
                (
                    d.stream_id.clone(),
                    ServedStream {
                        endpoint: None,
                        n_channels: d.n_channels(),
                        nominal_rate_hz: d.nominal_rate_hz.unwrap_or(0.0),
                        period_ns: d.sample_period_ns().unwrap_or(0),
                        chunk_len: config.chunk_len(d),
                        device_origin_ns: config.offset_ns(),
                        samples_emitted: 0,
                        samples_dropped: 0,
                        frames_emitted: 0,
                        status: "pending".into(),
                    },
                )
            })
            .collect(),
        marker_stream_id: MARKER_STREAM_ID.into(),
        marker_endpoint: None,
        planted_markers: markers.iter().map(|m| m.planted.clone()).collect(),
        markers_emitted: 0,
    }
}

// ---------------------------------------------------------------------------
// In-process sources

/// A simulated stream as an acquisition [`Source`], with host receipt
/// stamps synthesized as `t0 + due` instead of read from a clock.
pub struct SimulatedStream {
    handle: SourceHandle,
    gen: StreamGen,
    t0_host_ns: i64,
}

impl Source for SimulatedStream {
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
        Ok(self.gen.next().map(|mut f| {
            f.chunk.host_receipt_ts = HostTs::from_nanos(self.t0_host_ns + f.due_ns);
            SourceItem::Chunk(f.chunk)
        }))
    }
}

/// The simulator's marker stream as an in-process [`Source`].
pub struct SimulatedMarkers {
    handle: SourceHandle,
    markers: std::vec::IntoIter<SimMarker>,
    t0_host_ns: i64,
}

impl Source for SimulatedMarkers {
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
        Ok(self.markers.next().map(|m| SourceItem::Marker(m.to_event(HostTs::from_nanos(self.t0_host_ns + m.due_ns)))))
    }
}

/// Builds unpaced in-process sources for every simulated stream plus the
/// marker stream, and the ground-truth report they will realize.
pub fn in_process_sources(
    config: &SimConfig,
    t0_host: HostTs,
) -> Result<(Vec<Box<dyn Source>>, SimulatorReport), SimError> {
    config.validate()?;
    let t0 = t0_host.nanos();
    let markers = plan_markers(config, t0)?;
    let mut report = base_report(config, t0, &markers);
    let mut sources: Vec<Box<dyn Source>> = Vec::new();
    for (i, d) in config.descriptors.iter().enumerate() {
        let gen = StreamGen::for_stream(config, i)?;
        // the emitted/dropped split is a pure function of the windows
        let (emitted, dropped) = count_emitted(config, d);
        let s = report.streams.get_mut(&d.stream_id).expect("present");
        s.samples_emitted = emitted;
        s.samples_dropped = dropped;
        s.status = "in-process".into();
        sources.push(Box::new(SimulatedStream {
            handle: SourceHandle::new(d.clone(), SourceKind::Synthetic),
            gen,
            t0_host_ns: t0,
        }));
    }
    report.markers_emitted = markers.len() as u64;
    sources.push(Box::new(SimulatedMarkers {
        handle: SourceHandle::new(StreamDescriptor::marker(MARKER_STREAM_ID), SourceKind::Synthetic),
        markers: markers.into_iter(),
        t0_host_ns: t0,
    }));
    Ok((sources, report))
}

fn count_emitted(config: &SimConfig, d: &StreamDescriptor) -> (u64, u64) {
    let total = config.total_samples(d);
    if config.faults.stall {
        return (total, 0);
    }
    let period = d.sample_period_ns().unwrap_or(1);
    let windows = config.windows_ns(&d.stream_id);
    let dropped = (0..total)
        .filter(|&k| {
            let t = (k * period) as i64;
            windows.iter().any(|&(a, b)| a <= t && t < b)
        })
        .count() as u64;
    (total - dropped, dropped)
}

// ---------------------------------------------------------------------------
// Network server

/// Serving options.
#[derive(Clone, Debug)]
pub struct ServeOptions {
    /// Sleep until each frame is due. Unpaced serving sends back to back.
    pub paced: bool,
    /// How long to wait for the recorder to connect to each stream.
    pub accept_timeout: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { paced: true, accept_timeout: Duration::from_secs(30) }
    }
}

/// Bound listeners, one per stream plus one for markers.
pub struct SimulatorServer {
    config: SimConfig,
    listeners: Vec<(StreamDescriptor, TcpListener)>,
}

impl SimulatorServer {
    /// Binds stream `i` to `listen.port() + i` and the marker stream to the
    /// port after the last data stream. Port 0 binds every stream to an
    /// ephemeral port.
    pub fn bind(config: SimConfig, listen: SocketAddr) -> Result<Self, SimError> {
        config.validate()?;
        let mut descs = config.descriptors.clone();
        if config.marker_count > 0 {
            descs.push(StreamDescriptor::marker(MARKER_STREAM_ID));
        }
        let mut listeners = Vec::new();
        for (i, d) in descs.into_iter().enumerate() {
            let mut addr = listen;
            if listen.port() != 0 {
                let port = listen.port() as usize + i;
                if port > u16::MAX as usize {
                    return Err(invalid("port range exhausted"));
                }
                addr.set_port(port as u16);
            }
            let l = TcpListener::bind(addr)
                .map_err(|e| SimError::BindFailure { addr: addr.to_string(), reason: e.to_string() })?;
            listeners.push((d, l));
        }
        Ok(Self { config, listeners })
    }

    /// `(stream_id, address)` for every listener, markers last.
    pub fn endpoints(&self) -> Vec<(String, SocketAddr)> {
        self.listeners.iter().map(|(d, l)| (d.stream_id.clone(), l.local_addr().expect("bound listener"))).collect()
    }

    /// Accepts one recorder per stream, performs the handshakes, then
    /// streams every frame. Returns when all streams are done.
    pub fn run(self, stop: &StopToken, opts: &ServeOptions) -> Result<SimulatorReport, SimError> {
        let endpoints = self.endpoints();
        let config = &self.config;

        // phase 1: concurrent accept + handshake
        let connected: Vec<Result<TcpStream, String>> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .listeners
                .iter()
                .map(|(d, l)| scope.spawn(move || accept_and_handshake(l, d, stop, opts.accept_timeout)))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("handshake thread panicked".into()))).collect()
        });

        let t0_host = host_now().nanos();
        let t0 = Instant::now();
        let markers = plan_markers(config, t0_host)?;
        let mut report = base_report(config, t0_host, &markers);
        for (id, addr) in &endpoints {
            if id == MARKER_STREAM_ID {
                report.marker_endpoint = Some(addr.to_string());
            } else if let Some(s) = report.streams.get_mut(id) {
                s.endpoint = Some(addr.to_string());
            }
        }

        // phase 2: one producer per connection
        let n = config.descriptors.len();
        let mut conns = connected.into_iter();
        let data: Vec<_> = conns.by_ref().take(n).collect();
        let marker_conn = conns.next();
        let outcome = std::thread::scope(|scope| -> Result<_, SimError> {
            let mut handles = Vec::new();
            for (i, conn) in data.into_iter().enumerate() {
                let gen = StreamGen::for_stream(config, i)?;
                handles.push(scope.spawn(move || serve_stream(conn, gen, t0, stop, opts.paced)));
            }
            let marker_handle = marker_conn.map(|conn| {
                let ms = markers.clone();
                scope.spawn(move || serve_markers(conn, ms, t0, stop, opts.paced))
            });
            let streams: Vec<_> = handles.into_iter().map(|h| h.join().expect("stream thread")).collect();
            let marker = marker_handle.map(|h| h.join().expect("marker thread"));
            Ok((streams, marker))
        })?;

        let (streams, marker) = outcome;
        for (d, o) in config.descriptors.iter().zip(streams) {
            let s = report.streams.get_mut(&d.stream_id).expect("present");
            s.samples_emitted = o.samples;
            s.samples_dropped = o.dropped;
            s.frames_emitted = o.frames;
            s.status = o.status;
        }
        if let Some(m) = marker {
            report.markers_emitted = m.frames;
        }
        Ok(report)
    }
}

fn accept_and_handshake(
    listener: &TcpListener,
    desc: &StreamDescriptor,
    stop: &StopToken,
    timeout: Duration,
) -> Result<TcpStream, String> {
    listener.set_nonblocking(true).map_err(|e| e.to_string())?;
    let deadline = Instant::now() + timeout;
    let mut stream = loop {
        match listener.accept() {
            Ok((s, _)) => break s,
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if stop.is_stopped() {
                    return Err("stopped before a recorder connected".into());
                }
                if Instant::now() >= deadline {
                    return Err("no recorder connected".into());
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.to_string()),
        }
    };
    stream.set_nonblocking(false).map_err(|e| e.to_string())?;
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(Duration::from_secs(5))).map_err(|e| e.to_string())?;
    wire::write_handshake(&mut stream, &WireDescriptor::from(desc)).map_err(|e| e.to_string())?;
    match wire::read_reply(&mut stream).map_err(|e| e.to_string())? {
        Ok(()) => Ok(stream),
        Err(reason) => Err(format!("rejected: {reason}")),
    }
}

struct ServeOutcome {
    samples: u64,
    dropped: u64,
    frames: u64,
    status: String,
}

/// Sleeps until `due` past `t0`, sending heartbeats on `conn` whenever it
/// has been idle for [`HEARTBEAT_INTERVAL`].
fn wait_until(
    conn: &mut TcpStream,
    t0: Instant,
    due_ns: i64,
    last_send: &mut Instant,
    stop: &StopToken,
) -> io::Result<bool> {
    let due = t0 + Duration::from_nanos(due_ns.max(0) as u64);
    loop {
        if stop.is_stopped() {
            return Ok(false);
        }
        let now = Instant::now();
        if now >= due {
            return Ok(true);
        }
        let next_beat = *last_send + HEARTBEAT_INTERVAL;
        if now >= next_beat {
            conn.write_all(&Frame::Heartbeat { sequence_number: 0 }.to_bytes())?;
            *last_send = now;
            continue;
        }
        let wake = due.min(next_beat).min(now + Duration::from_millis(100));
        std::thread::sleep(wake - now);
    }
}

fn serve_stream(
    conn: Result<TcpStream, String>,
    mut gen: StreamGen,
    t0: Instant,
    stop: &StopToken,
    paced: bool,
) -> ServeOutcome {
    let mut out = ServeOutcome { samples: 0, dropped: 0, frames: 0, status: "served".into() };
    let mut conn = match conn {
        Ok(c) => c,
        Err(e) => {
            out.status = e;
            return out;
        }
    };
    let mut last_send = Instant::now();
    let mut buf = Vec::new();
    for f in gen.by_ref() {
        if paced {
            match wait_until(&mut conn, t0, f.due_ns, &mut last_send, stop) {
                Ok(true) => {}
                Ok(false) => {
                    out.status = "stopped".into();
                    break;
                }
                Err(e) => {
                    out.status = format!("disconnected: {e}");
                    break;
                }
            }
        } else if stop.is_stopped() {
            out.status = "stopped".into();
            break;
        }
        buf.clear();
        let c = &f.chunk;
        Frame::Chunk {
            sequence_number: c.sequence_number,
            first_device_ts_ns: c.first_device_ts.nanos(),
            n_samples: c.n_samples() as u32,
            payload: c.samples.to_le_bytes(),
        }
        .encode(&mut buf);
        if let Err(e) = conn.write_all(&buf) {
            out.status = format!("disconnected: {e}");
            break;
        }
        last_send = Instant::now();
        out.frames += 1;
        out.samples += c.n_samples() as u64;
    }
    out.dropped = gen.samples_dropped;
    conn.flush().ok();
    conn.shutdown(Shutdown::Write).ok();
    out
}

fn serve_markers(
    conn: Result<TcpStream, String>,
    markers: Vec<SimMarker>,
    t0: Instant,
    stop: &StopToken,
    paced: bool,
) -> ServeOutcome {
    let mut out = ServeOutcome { samples: 0, dropped: 0, frames: 0, status: "served".into() };
    let mut conn = match conn {
        Ok(c) => c,
        Err(e) => {
            out.status = e;
            return out;
        }
    };
    let mut last_send = Instant::now();
    for m in markers {
        if paced {
            match wait_until(&mut conn, t0, m.due_ns, &mut last_send, stop) {
                Ok(true) => {}
                _ => break,
            }
        }
        let frame = Frame::Marker {
            sequence_number: m.planted.marker_id,
            device_ts_ns: m.planted.device_ts_ns,
            json: m.json(),
        };
        if conn.write_all(&frame.to_bytes()).is_err() {
            out.status = "disconnected".into();
            break;
        }
        last_send = Instant::now();
        out.frames += 1;
    }
    conn.flush().ok();
    conn.shutdown(Shutdown::Write).ok();
    out
}

/// Binds, serves and reports in one call.
pub fn simulate_device(
    config: SimConfig,
    listen: SocketAddr,
    stop: &StopToken,
    opts: &ServeOptions,
) -> Result<SimulatorReport, SimError> {
    SimulatorServer::bind(config, listen)?.run(stop, opts)
}
