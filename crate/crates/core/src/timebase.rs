//! Clock mapping, gap detection, resampling and marker-to-sample alignment.
//!
//! All functions here are pure: they take immutable inputs and can be
//! called from any number of threads at once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Chunk, ClockMapping, DeviceTs, EventMarker, HostTs, StreamDescriptor};

/// Default gap threshold, in multiples of the nominal sample period.
pub const DEFAULT_TOLERANCE_FACTOR: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimebaseError {
    #[error("cannot map clocks: need at least 2 distinct device timestamps, got {distinct}")]
    DegenerateInput { distinct: usize },
    #[error("sequence number went from {previous} to {next}")]
    UnsortedInput { previous: u64, next: u64 },
    #[error("timestamp {ts_ns} ns outside the observed span [{first_ns}, {last_ns}]")]
    OutOfRange { ts_ns: i64, first_ns: i64, last_ns: i64 },
    #[error("invalid series: {0}")]
    InvalidSeries(String),
}

/// Least-squares affine fit of host time against device time.
///
/// With `robust` set, points whose residual exceeds three times the RMS
/// residual are dropped once and the fit is repeated on the rest.
pub fn estimate_clock_mapping(pairs: &[(DeviceTs, HostTs)], robust: bool) -> Result<ClockMapping, TimebaseError> {
    let mapping = fit(pairs)?;
    if !robust || mapping.rms_residual_ns == 0.0 {
        return Ok(mapping);
    }
    let limit = 3.0 * mapping.rms_residual_ns;
    let kept: Vec<_> = pairs.iter().copied().filter(|&(d, h)| residual(&mapping, d, h).abs() <= limit).collect();
    if kept.len() == pairs.len() {
        return Ok(mapping);
    }
    // too few survivors to refit: keep the full-set estimate
    fit(&kept).or(Ok(mapping))
}

fn fit(pairs: &[(DeviceTs, HostTs)]) -> Result<ClockMapping, TimebaseError> {
    let distinct = {
        let mut xs: Vec<i64> = pairs.iter().map(|p| p.0.nanos()).collect();
        xs.sort_unstable();
        xs.dedup();
        xs.len()
    };
    if distinct < 2 {
        return Err(TimebaseError::DegenerateInput { distinct });
    }

    // Regress the clock offset (host - device) on device time. Everything is
    // centred on the first pair so the f64 terms stay small.
    let x0 = pairs[0].0.nanos();
    let y0 = pairs[0].1.nanos() - x0;
    let n = pairs.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    for &(d, h) in pairs {
        sx += (d.nanos() - x0) as f64;
        sy += (h.nanos() - d.nanos() - y0) as f64;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(d, h) in pairs {
        let dx = (d.nanos() - x0) as f64 - mx;
        let dy = (h.nanos() - d.nanos() - y0) as f64 - my;
        sxx += dx * dx;
        sxy += dx * dy;
    }
    let slope = 1.0 + sxy / sxx;
    // map_to_host multiplies by (slope - 1), so the intercept must use the
    // rate as stored rather than the unrounded regression coefficient
    let beta = slope - 1.0;
    let alpha = my - beta * mx;
    let intercept_ns = y0 + (alpha - beta * x0 as f64).round() as i64;

    let mut mapping = ClockMapping { slope, intercept_ns, rms_residual_ns: 0.0, n_points: pairs.len() };
    let ss: f64 = pairs.iter().map(|&(d, h)| residual(&mapping, d, h).powi(2)).sum();
    mapping.rms_residual_ns = (ss / n).sqrt();
    Ok(mapping)
}

fn residual(m: &ClockMapping, d: DeviceTs, h: HostTs) -> f64 {
    (h.nanos() - d.nanos() - m.intercept_ns) as f64 - (m.slope - 1.0) * d.nanos() as f64
}

/// Applies `mapping` to a device timestamp.
pub fn map_to_host(mapping: &ClockMapping, device_ts: DeviceTs) -> HostTs {
    mapping.map_to_host(device_ts)
}

/// A detected discontinuity in a nominally periodic stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub stream_id: String,
    pub after_sequence_number: u64,
    pub expected_next_device_ts: DeviceTs,
    pub observed_next_device_ts: DeviceTs,
    pub missing_sample_estimate: u64,
}

/// Reports every place the device-time interval between neighbouring
/// samples exceeds `tolerance_factor` periods, or the chunk sequence jumps.
pub fn detect_gaps(
    chunks: &[Chunk],
    descriptor: &StreamDescriptor,
    tolerance_factor: f64,
) -> Result<Vec<Gap>, TimebaseError> {
    let nominal = descriptor.sample_period_ns();
    let mut gaps = Vec::new();
    let mut prev: Option<(&Chunk, DeviceTs)> = None;

    for chunk in chunks {
        let period = nominal.unwrap_or(chunk.sample_period_ns) as i64;
        if period <= 0 {
            return Err(TimebaseError::InvalidSeries("sample period must be positive".into()));
        }
        let threshold = tolerance_factor * period as f64;
        let mut check = |after_seq: u64, last: DeviceTs, next: DeviceTs, seq_jump: bool| {
            let interval = next - last;
            let missing = ((interval - period) as f64 / period as f64).round().max(0.0) as u64;
            if seq_jump || (interval as f64 > threshold && missing >= 1) {
                gaps.push(Gap {
                    stream_id: chunk.stream_id.clone(),
                    after_sequence_number: after_seq,
                    expected_next_device_ts: last + period,
                    observed_next_device_ts: next,
                    missing_sample_estimate: missing.max(1),
                });
            }
        };

        if let Some((p, last)) = prev {
            if chunk.sequence_number <= p.sequence_number {
                return Err(TimebaseError::UnsortedInput { previous: p.sequence_number, next: chunk.sequence_number });
            }
            if chunk.n_samples() > 0 {
                let jump = chunk.sequence_number != p.sequence_number + 1;
                check(p.sequence_number, last, chunk.first_device_ts, jump);
            }
        }
        if chunk.per_sample_device_ts.is_some() {
            for k in 1..chunk.n_samples() {
                check(chunk.sequence_number, chunk.device_ts(k - 1), chunk.device_ts(k), false);
            }
        }
        if chunk.n_samples() > 0 {
            prev = Some((chunk, chunk.last_device_ts()));
        } else if let Some((_, last)) = prev {
            // keep the last real sample but advance the sequence reference
            prev = Some((chunk, last));
        }
    }
    Ok(gaps)
}

/// Multichannel series on an integer-nanosecond time axis.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub timestamps: Vec<i64>,
    /// One vector per channel, each as long as `timestamps`.
    pub channels: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(timestamps: Vec<i64>, channels: Vec<Vec<f64>>) -> Result<Self, TimebaseError> {
        if channels.iter().any(|c| c.len() != timestamps.len()) {
            return Err(TimebaseError::InvalidSeries("channel length differs from timestamp count".into()));
        }
        if timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(TimebaseError::InvalidSeries("timestamps not strictly increasing".into()));
        }
        Ok(Self { timestamps, channels })
    }

    /// Flattens the chunks of one stream onto the device time axis.
    pub fn from_chunks(chunks: &[Chunk]) -> Result<Self, TimebaseError> {
        let n_ch = chunks.first().map(|c| c.n_channels).unwrap_or(0);
        let mut ts = Vec::new();
        let mut channels = vec![Vec::new(); n_ch];
        for c in chunks {
            for k in 0..c.n_samples() {
                ts.push(c.device_ts(k).nanos());
                for (ch, col) in channels.iter_mut().enumerate() {
                    col.push(c.value(k, ch));
                }
            }
        }
        Self::new(ts, channels)
    }
}

/// Per-channel linear interpolation at `targets`. Exact at source nodes;
/// never extrapolates.
pub fn resample_linear(series: &TimeSeries, targets: &[i64]) -> Result<Vec<Vec<f64>>, TimebaseError> {
    let ts = &series.timestamps;
    let (first, last) = match (ts.first(), ts.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return Err(TimebaseError::InvalidSeries("empty source series".into())),
    };
    let mut out = vec![Vec::with_capacity(targets.len()); series.channels.len()];
    for &t in targets {
        if t < first || t > last {
            return Err(TimebaseError::OutOfRange { ts_ns: t, first_ns: first, last_ns: last });
        }
        // index of the last node <= t
        let i = ts.partition_point(|&s| s <= t) - 1;
        if ts[i] == t {
            for (o, c) in out.iter_mut().zip(&series.channels) {
                o.push(c[i]);
            }
            continue;
        }
        let w = (t - ts[i]) as f64 / (ts[i + 1] - ts[i]) as f64;
        for (o, c) in out.iter_mut().zip(&series.channels) {
            o.push(c[i] + (c[i + 1] - c[i]) * w);
        }
    }
    Ok(out)
}

/// A marker located on one stream's sample grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedMarker {
    pub marker_id: u64,
    pub stream_id: String,
    pub sample_index: u64,
    /// Sub-sample position in `[0, 1)` toward the next sample.
    pub fractional_offset: f64,
    pub host_ts_used: HostTs,
}

impl AlignedMarker {
    pub fn position(&self) -> f64 {
        self.sample_index as f64 + self.fractional_offset
    }
}

/// Mapped host time of every sample in a stream, in recorded order.
#[derive(Clone, Debug)]
pub struct HostTimeline {
    stream_id: String,
    host_ns: Vec<i64>,
}

impl HostTimeline {
    pub fn new(chunks: &[Chunk], descriptor: &StreamDescriptor, mapping: &ClockMapping) -> Self {
        let host_ns = chunks
            .iter()
            .flat_map(|c| (0..c.n_samples()).map(move |k| mapping.map_to_host(c.device_ts(k)).nanos()))
            .collect();
        Self { stream_id: descriptor.stream_id.clone(), host_ns }
    }

    pub fn len(&self) -> usize {
        self.host_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.host_ns.is_empty()
    }

    pub fn host_ts(&self, index: usize) -> HostTs {
        HostTs::from_nanos(self.host_ns[index])
    }

    /// Host time the marker is aligned by: its device stamp mapped through
    /// `mapping` when it has one, its host stamp otherwise.
    pub fn marker_host_ts(marker: &EventMarker, mapping: &ClockMapping) -> HostTs {
        match marker.device_ts {
            Some(d) => mapping.map_to_host(d),
            None => marker.host_ts,
        }
    }

    pub fn locate(&self, marker_id: u64, target: HostTs) -> Result<AlignedMarker, TimebaseError> {
        let t = target.nanos();
        let (first, last) = match (self.host_ns.first(), self.host_ns.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(TimebaseError::OutOfRange { ts_ns: t, first_ns: 0, last_ns: -1 }),
        };
        if t < first || t > last {
            return Err(TimebaseError::OutOfRange { ts_ns: t, first_ns: first, last_ns: last });
        }
        let k = self.host_ns.partition_point(|&h| h <= t) - 1;
        let fractional_offset = if self.host_ns[k] == t || k + 1 == self.host_ns.len() {
            0.0
        } else {
            let f = (t - self.host_ns[k]) as f64 / (self.host_ns[k + 1] - self.host_ns[k]) as f64;
            f.min(1.0 - f64::EPSILON)
        };
        Ok(AlignedMarker {
            marker_id,
            stream_id: self.stream_id.clone(),
            sample_index: k as u64,
            fractional_offset,
            host_ts_used: target,
        })
    }

    pub fn align(&self, marker: &EventMarker, mapping: &ClockMapping) -> Result<AlignedMarker, TimebaseError> {
        self.locate(marker.marker_id, Self::marker_host_ts(marker, mapping))
    }
}

/// Locates `marker` on the sample grid of one stream.
///
/// The sample chosen is the last one whose mapped host time is at or
/// before the marker; a marker exactly on a sample gets offset 0.
pub fn align_marker(
    marker: &EventMarker,
    chunks: &[Chunk],
    descriptor: &StreamDescriptor,
    mapping: &ClockMapping,
) -> Result<AlignedMarker, TimebaseError> {
    HostTimeline::new(chunks, descriptor, mapping).align(marker, mapping)
}
