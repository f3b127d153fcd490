use std::f64::consts::TAU;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{IngestError, Source, SourceHandle, SourceItem, SourceKind, StopToken};
use crate::clock::host_now;
use crate::model::{Chunk, DeviceTs, HostTs, Modality, Samples, StreamDescriptor};

/// Content of one synthetic channel, as a function of time `t` in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SignalSpec {
    /// `amplitude * sin(2 pi freq_hz t + phase)`
    Sine {
        freq_hz: f64,
        amplitude: f64,
        phase: f64,
    },
    /// Zero-mean white noise.
    GaussianNoise {
        sigma: f64,
    },
    Constant {
        value: f64,
    },
    /// `rate * t`
    Ramp {
        rate: f64,
    },
    /// Pointwise sum of the parts.
    Sum {
        parts: Vec<SignalSpec>,
    },
}

impl SignalSpec {
    pub fn sine(freq_hz: f64, amplitude: f64, phase: f64) -> Self {
        SignalSpec::Sine { freq_hz, amplitude, phase }
    }

    fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidConfig(m.to_string()));
        match self {
            SignalSpec::Sine { freq_hz, amplitude, phase } => {
                if ![freq_hz, amplitude, phase].iter().all(|v| v.is_finite()) {
                    return bad("sine parameters must be finite");
                }
            }
            SignalSpec::GaussianNoise { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return bad("noise sigma must be finite and non-negative");
                }
            }
            SignalSpec::Constant { value } | SignalSpec::Ramp { rate: value } => {
                if !value.is_finite() {
                    return bad("signal parameters must be finite");
                }
            }
            SignalSpec::Sum { parts } => parts.iter().try_for_each(SignalSpec::validate)?,
        }
        Ok(())
    }

    fn eval(&self, t: f64, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            SignalSpec::Sine { freq_hz, amplitude, phase } => amplitude * (TAU * freq_hz * t + phase).sin(),
            SignalSpec::GaussianNoise { sigma } if *sigma == 0.0 => 0.0,
            SignalSpec::GaussianNoise { sigma } => Normal::new(0.0, *sigma).expect("validated").sample(rng),
            SignalSpec::Constant { value } => *value,
            SignalSpec::Ramp { rate } => rate * t,
            SignalSpec::Sum { parts } => parts.iter().map(|p| p.eval(t, rng)).sum(),
        }
    }
}

/// Text form used on the command line: `sine:FREQ:AMP[:PHASE]`,
/// `noise:SIGMA`, `const:VALUE`, `ramp:RATE`, joined with `+` for sums.
impl FromStr for SignalSpec {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains('+') {
            let parts = s.split('+').map(str::parse).collect::<Result<Vec<_>, _>>()?;
            return Ok(SignalSpec::Sum { parts });
        }
        let bad = || IngestError::InvalidConfig(format!("bad signal spec {s:?}"));
        let mut it = s.split(':');
        let name = it.next().unwrap_or_default();
        let nums = it.map(|v| v.parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>()?;
        let spec = match (name, nums.as_slice()) {
            ("sine", [f, a]) => SignalSpec::sine(*f, *a, 0.0),
            ("sine", [f, a, p]) => SignalSpec::sine(*f, *a, *p),
            ("noise", [s]) => SignalSpec::GaussianNoise { sigma: *s },
            ("const", [v]) => SignalSpec::Constant { value: *v },
            ("ramp", [r]) => SignalSpec::Ramp { rate: *r },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Default content per modality. Deterministic, not realistic.
pub fn default_signals(desc: &StreamDescriptor) -> Vec<SignalSpec> {
    let n = desc.n_channels();
    (0..n)
        .map(|c| {
            let c = c as f64;
            match desc.modality {
                Modality::Eeg | Modality::Exg | Modality::Emg | Modality::Eog => SignalSpec::Sum {
                    parts: vec![SignalSpec::sine(8.0 + c, 10.0, 0.3 * c), SignalSpec::GaussianNoise { sigma: 2.0 }],
                },
                Modality::Ppg => SignalSpec::Sum {
                    parts: vec![
                        SignalSpec::Constant { value: 1000.0 },
                        SignalSpec::sine(1.2, 50.0, 0.0),
                        SignalSpec::sine(2.4, 20.0, 0.5),
                    ],
                },
                Modality::Imu => SignalSpec::Sum {
                    parts: vec![
                        SignalSpec::Constant { value: if c == 2.0 { 1.0 } else { 0.0 } },
                        SignalSpec::GaussianNoise { sigma: 0.01 },
                    ],
                },
                Modality::Mag => SignalSpec::Sum {
                    parts: vec![
                        SignalSpec::Constant { value: 20.0 + 10.0 * c },
                        SignalSpec::GaussianNoise { sigma: 0.5 },
                    ],
                },
                Modality::Marker => SignalSpec::Constant { value: 0.0 },
            }
        })
        .collect()
}

/// Samples per 100 ms chunk at the descriptor's rate (at least one).
pub fn default_chunk_len(desc: &StreamDescriptor) -> usize {
    desc.nominal_rate_hz.map(|r| (r * 0.1).round().max(1.0) as usize).unwrap_or(1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SynthPacing {
    /// Emit as fast as the consumer takes chunks; host stamps are synthesized
    /// as `host_origin + time of the chunk's last sample`.
    #[default]
    Unpaced,
    /// Sleep until each chunk's last sample is due and stamp the host clock.
    RealTime,
}

/// Deterministic generator of periodic chunks for one stream.
#[derive(Clone, Debug)]
pub struct SynthSource {
    handle: SourceHandle,
    signals: Vec<SignalSpec>,
    total_samples: u64,
    chunk_len: usize,
    period_ns: u64,
    rate: f64,
    next_sample: u64,
    seq: u64,
    rng: ChaCha8Rng,
    device_origin: DeviceTs,
    host_origin: HostTs,
    pacing: SynthPacing,
    started: Option<Instant>,
}

/// Builds a synthetic source emitting `round(duration_s * rate)` samples in
/// chunks of `chunk_len`, one [`SignalSpec`] per channel.
pub fn synth_source(
    descriptor: StreamDescriptor,
    signals: Vec<SignalSpec>,
    duration_s: f64,
    chunk_len: usize,
    seed: u64,
) -> Result<SynthSource, IngestError> {
    let rate = descriptor
        .nominal_rate_hz
        .filter(|r| r.is_finite() && *r > 0.0)
        .ok_or_else(|| IngestError::InvalidConfig(format!("{} has no sampling rate", descriptor.stream_id)))?;
    if chunk_len == 0 {
        return Err(IngestError::InvalidConfig("chunk_len must be at least 1".into()));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(IngestError::InvalidConfig("duration must be positive".into()));
    }
    if signals.len() != descriptor.n_channels() {
        return Err(IngestError::InvalidConfig(format!(
            "{} signals for {} channels",
            signals.len(),
            descriptor.n_channels()
        )));
    }
    signals.iter().try_for_each(SignalSpec::validate)?;
    Ok(SynthSource {
        period_ns: descriptor.sample_period_ns().expect("rate checked"),
        handle: SourceHandle::new(descriptor, SourceKind::Synthetic),
        signals,
        total_samples: (duration_s * rate).round() as u64,
        chunk_len,
        rate,
        next_sample: 0,
        seq: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
        device_origin: DeviceTs::from_nanos(0),
        host_origin: HostTs::from_nanos(0),
        pacing: SynthPacing::Unpaced,
        started: None,
    })
}

impl SynthSource {
    /// Device timestamp of sample 0 and the host instant it corresponds to.
    pub fn with_origins(mut self, device: DeviceTs, host: HostTs) -> Self {
        self.device_origin = device;
        self.host_origin = host;
        self
    }

    pub fn with_pacing(mut self, pacing: SynthPacing) -> Self {
        self.pacing = pacing;
        self
    }

    pub fn total_samples(&self) -> u64 {
        self.total_samples
    }

    pub fn chunk_count(&self) -> u64 {
        self.total_samples.div_ceil(self.chunk_len as u64)
    }

    fn generate(&mut self) -> Option<Chunk> {
        if self.next_sample >= self.total_samples {
            return None;
        }
        let first = self.next_sample;
        let n = (self.total_samples - first).min(self.chunk_len as u64);
        let nch = self.signals.len();
        let mut values = Vec::with_capacity(n as usize * nch);
        for i in first..first + n {
            let t = i as f64 / self.rate;
            for c in 0..nch {
                values.push(self.signals[c].eval(t, &mut self.rng));
            }
        }
        let last_offset = ((first + n - 1) * self.period_ns) as i64;
        let host_receipt_ts = match self.pacing {
            SynthPacing::Unpaced => self.host_origin + last_offset,
            SynthPacing::RealTime => {
                let started = *self.started.get_or_insert_with(Instant::now);
                let due = Duration::from_nanos(last_offset as u64);
                if let Some(wait) = due.checked_sub(started.elapsed()) {
                    std::thread::sleep(wait);
                }
                host_now()
            }
        };
        let desc = &self.handle.descriptor;
        let chunk = Chunk {
            stream_id: desc.stream_id.clone(),
            sequence_number: self.seq,
            first_device_ts: self.device_origin + (first * self.period_ns) as i64,
            sample_period_ns: self.period_ns,
            per_sample_device_ts: None,
            host_receipt_ts,
            n_channels: nch,
            samples: Samples::from_f64(desc.value_encoding, values),
        };
        self.next_sample += n;
        self.seq += 1;
        Some(chunk)
    }
}

impl Iterator for SynthSource {
    type Item = Chunk;

    fn next(&mut self) -> Option<Chunk> {
        self.generate()
    }
}

impl Source for SynthSource {
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
        Ok(self.generate().map(SourceItem::Chunk))
    }
}

/// One synthetic source per descriptor with default content and 100 ms
/// chunks. Seeds are derived from `seed` and the stream position.
pub fn galea_synth_sources(
    descriptors: &[StreamDescriptor],
    duration_s: f64,
    seed: u64,
    pacing: SynthPacing,
    host_origin: HostTs,
) -> Result<Vec<SynthSource>, IngestError> {
    descriptors
        .iter()
        .enumerate()
        .map(|(i, d)| {
            synth_source(d.clone(), default_signals(d), duration_s, default_chunk_len(d), seed.wrapping_add(i as u64))
                .map(|s| s.with_pacing(pacing).with_origins(DeviceTs::from_nanos(0), host_origin))
        })
        .collect()
}
