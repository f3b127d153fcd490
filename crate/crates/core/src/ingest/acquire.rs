use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{IngestError, Source, SourceItem, SourceKind, SourceState, StopToken};
use crate::model::{Chunk, EventMarker, HostTs};
use crate::store::SessionWriter;

/// What a producer does when its stream's queue is full.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OverflowPolicy {
    /// Wait for the consumer. Lossless.
    #[default]
    Block,
    /// Discard the oldest queued item and count it.
    DropOldest,
    /// Abort the run.
    Fail,
}

impl std::str::FromStr for OverflowPolicy {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "block" => Ok(OverflowPolicy::Block),
            "drop_oldest" => Ok(OverflowPolicy::DropOldest),
            "fail" => Ok(OverflowPolicy::Fail),
            _ => Err(IngestError::InvalidConfig(format!("unknown overflow policy {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AcquisitionConfig {
    /// Items per stream queue.
    pub queue_capacity: usize,
    pub overflow_policy: OverflowPolicy,
    pub stop: StopToken,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self { queue_capacity: 256, overflow_policy: OverflowPolicy::Block, stop: StopToken::new() }
    }
}

/// Single consumer of acquired items.
pub trait AcquisitionSink {
    fn write_chunk(&mut self, chunk: &Chunk) -> Result<(), IngestError>;
    fn write_marker(&mut self, marker: &EventMarker) -> Result<(), IngestError>;
}

impl AcquisitionSink for SessionWriter {
    fn write_chunk(&mut self, chunk: &Chunk) -> Result<(), IngestError> {
        Ok(self.append_chunk(chunk)?)
    }

    fn write_marker(&mut self, marker: &EventMarker) -> Result<(), IngestError> {
        Ok(self.append_marker(marker)?)
    }
}

/// Keeps everything in memory, in consumption order.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub chunks: Vec<Chunk>,
    pub markers: Vec<EventMarker>,
}

impl AcquisitionSink for MemorySink {
    fn write_chunk(&mut self, chunk: &Chunk) -> Result<(), IngestError> {
        self.chunks.push(chunk.clone());
        Ok(())
    }

    fn write_marker(&mut self, marker: &EventMarker) -> Result<(), IngestError> {
        self.markers.push(marker.clone());
        Ok(())
    }
}

/// Per-stream counters.
///
/// `chunks_received + markers_received == chunks_written + markers_written
/// + overflow_drops` holds after every completed run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StreamStats {
    pub kind: SourceKind,
    pub chunks_received: u64,
    pub samples_received: u64,
    pub chunks_written: u64,
    pub markers_received: u64,
    pub markers_written: u64,
    pub overflow_drops: u64,
    pub max_queue_depth: usize,
    pub first_host_receipt_ts: Option<HostTs>,
    pub last_host_receipt_ts: Option<HostTs>,
    pub final_state: SourceState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StreamStats {
    fn new(kind: SourceKind) -> Self {
        Self {
            kind,
            chunks_received: 0,
            samples_received: 0,
            chunks_written: 0,
            markers_received: 0,
            markers_written: 0,
            overflow_drops: 0,
            max_queue_depth: 0,
            first_host_receipt_ts: None,
            last_host_receipt_ts: None,
            final_state: SourceState::Idle,
            error: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AcquisitionStats {
    pub streams: BTreeMap<String, StreamStats>,
    pub elapsed_s: f64,
}

impl AcquisitionStats {
    pub fn total_samples(&self) -> u64 {
        self.streams.values().map(|s| s.samples_received).sum()
    }

    pub fn total_overflow_drops(&self) -> u64 {
        self.streams.values().map(|s| s.overflow_drops).sum()
    }

    /// Aggregate samples per wall-clock second.
    pub fn samples_per_second(&self) -> f64 {
        if self.elapsed_s > 0.0 {
            self.total_samples() as f64 / self.elapsed_s
        } else {
            0.0
        }
    }

    pub fn failed_streams(&self) -> Vec<&str> {
        self.streams.iter().filter(|(_, s)| s.final_state == SourceState::Failed).map(|(k, _)| k.as_str()).collect()
    }
}

struct Shared {
    queues: Vec<VecDeque<(u64, SourceItem)>>,
    stats: Vec<StreamStats>,
    live: usize,
    arrivals: u64,
    abort: Option<IngestError>,
}

struct Loop {
    state: Mutex<Shared>,
    readable: Condvar,
    writable: Condvar,
    capacity: usize,
    policy: OverflowPolicy,
    ids: Vec<String>,
}

impl Loop {
    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Enqueues one item. `false` means the run was aborted.
    fn push(&self, i: usize, item: SourceItem) -> bool {
        let mut s = self.lock();
        let st = &mut s.stats[i];
        match &item {
            SourceItem::Chunk(c) => {
                st.chunks_received += 1;
                st.samples_received += c.n_samples() as u64;
                st.first_host_receipt_ts.get_or_insert(c.host_receipt_ts);
                st.last_host_receipt_ts = Some(c.host_receipt_ts);
            }
            SourceItem::Marker(_) => st.markers_received += 1,
        }
        loop {
            if s.abort.is_some() {
                return false;
            }
            if s.queues[i].len() < self.capacity {
                let n = s.arrivals;
                s.arrivals += 1;
                s.queues[i].push_back((n, item));
                let depth = s.queues[i].len();
                let st = &mut s.stats[i];
                st.max_queue_depth = st.max_queue_depth.max(depth);
                self.readable.notify_one();
                return true;
            }
            match self.policy {
                OverflowPolicy::Block => {
                    s = self.writable.wait_timeout(s, Duration::from_millis(50)).unwrap_or_else(|p| p.into_inner()).0;
                }
                OverflowPolicy::DropOldest => {
                    s.queues[i].pop_front();
                    s.stats[i].overflow_drops += 1;
                }
                OverflowPolicy::Fail => {
                    s.abort = Some(IngestError::Overflow(self.ids[i].clone()));
                    self.readable.notify_all();
                    self.writable.notify_all();
                    return false;
                }
            }
        }
    }

    /// Next item in arrival order, `None` once every producer is done and
    /// every queue is empty (or the run was aborted).
    fn pop(&self) -> Option<(usize, SourceItem)> {
        let mut s = self.lock();
        loop {
            if s.abort.is_some() {
                return None;
            }
            let next =
                s.queues.iter().enumerate().filter_map(|(i, q)| q.front().map(|(n, _)| (*n, i))).min().map(|(_, i)| i);
            if let Some(i) = next {
                let (_, item) = s.queues[i].pop_front().expect("non-empty");
                self.writable.notify_all();
                return Some((i, item));
            }
            if s.live == 0 {
                return None;
            }
            s = self.readable.wait(s).unwrap_or_else(|p| p.into_inner());
        }
    }
}

/// Runs every source on its own thread and drains their queues into `sink`
/// until all sources end or `config.stop` is set.
///
/// A failing source is recorded in its stats and does not stop the others.
/// A sink error, or an overflow under [`OverflowPolicy::Fail`], aborts the
/// run and drops every source.
pub fn run_acquisition(
    sources: Vec<Box<dyn Source>>,
    sink: &mut dyn AcquisitionSink,
    config: &AcquisitionConfig,
) -> Result<AcquisitionStats, IngestError> {
    if config.queue_capacity == 0 {
        return Err(IngestError::InvalidConfig("queue capacity must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    for s in &sources {
        if !seen.insert(s.descriptor().stream_id.clone()) {
            return Err(IngestError::InvalidConfig(format!("duplicate stream id {:?}", s.descriptor().stream_id)));
        }
    }
    let started = Instant::now();
    let ids: Vec<String> = sources.iter().map(|s| s.descriptor().stream_id.clone()).collect();
    let lp = Loop {
        state: Mutex::new(Shared {
            queues: sources.iter().map(|_| VecDeque::new()).collect(),
            stats: sources.iter().map(|s| StreamStats::new(s.kind())).collect(),
            live: sources.len(),
            arrivals: 0,
            abort: None,
        }),
        readable: Condvar::new(),
        writable: Condvar::new(),
        capacity: config.queue_capacity,
        policy: config.overflow_policy,
        ids: ids.clone(),
    };

    let consumed: Result<(), IngestError> = std::thread::scope(|scope| {
        for (i, mut src) in sources.into_iter().enumerate() {
            let lp = &lp;
            let stop = config.stop.clone();
            scope.spawn(move || {
                let mut error = None;
                if src.handle().state() == SourceState::Idle {
                    if let Err(e) = src.handle_mut().start() {
                        error = Some(e.to_string());
                    }
                }
                while error.is_none() {
                    match src.next_item(&stop) {
                        Ok(Some(item)) => {
                            if !lp.push(i, item) {
                                break;
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            log::warn!("source {} failed: {e}", src.descriptor().stream_id);
                            error = Some(e.to_string());
                        }
                    }
                }
                src.handle_mut().finish(error.is_some());
                let final_state = src.handle().state();
                drop(src);
                let mut s = lp.lock();
                s.stats[i].final_state = final_state;
                s.stats[i].error = error;
                s.live -= 1;
                lp.readable.notify_all();
            });
        }

        while let Some((i, item)) = lp.pop() {
            let r = match &item {
                SourceItem::Chunk(c) => sink.write_chunk(c),
                SourceItem::Marker(m) => sink.write_marker(m),
            };
            let mut s = lp.lock();
            match r {
                Ok(()) => match item {
                    SourceItem::Chunk(_) => s.stats[i].chunks_written += 1,
                    SourceItem::Marker(_) => s.stats[i].markers_written += 1,
                },
                Err(e) => {
                    s.abort = Some(IngestError::SinkFailure(e.to_string()));
                    lp.writable.notify_all();
                    break;
                }
            }
        }
        let aborted = lp.lock().abort.is_some();
        if aborted {
            // close every source promptly, then let the scope join them
            config.stop.stop();
        }
        Ok(())
    });
    consumed?;

    let mut shared = lp.state.into_inner().unwrap_or_else(|p| p.into_inner());
    if let Some(e) = shared.abort.take() {
        return Err(e);
    }
    Ok(AcquisitionStats {
        streams: ids.into_iter().zip(shared.stats).collect(),
        elapsed_s: started.elapsed().as_secs_f64(),
    })
}
