//! Seeded random sessions for round-trip and corruption tests.

use std::collections::BTreeMap;
use std::path::Path;

use observa::model::{
    Chunk, DeviceTs, EventMarker, HostTs, InteractionPrimitive, Modality, Payload, PayloadValue, PrimitiveKind,
    Samples, StreamDescriptor, ValueEncoding,
};
use observa::store::{create_session, SessionRecord, WriterOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct SessionSpec {
    pub descriptors: Vec<StreamDescriptor>,
    pub marker_sources: Vec<String>,
    pub metadata: BTreeMap<String, String>,
    /// In write order.
    pub records: Vec<SessionRecord>,
}

pub struct Limits {
    pub max_streams: usize,
    pub max_channels: usize,
    pub max_chunks: usize,
    pub max_chunk_len: usize,
    pub max_markers: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_streams: 4, max_channels: 12, max_chunks: 40, max_chunk_len: 40, max_markers: 12 }
    }
}

const MODALITIES: [Modality; 7] =
    [Modality::Eeg, Modality::Exg, Modality::Emg, Modality::Eog, Modality::Ppg, Modality::Imu, Modality::Mag];
const ENCODINGS: [ValueEncoding; 3] = [ValueEncoding::Float32, ValueEncoding::Float64, ValueEncoding::Int32];
const RATES: [f64; 5] = [25.0, 125.0, 250.0, 500.0, 1000.0];

fn samples(rng: &mut ChaCha8Rng, enc: ValueEncoding, n: usize) -> Samples {
    match enc {
        ValueEncoding::Float32 => Samples::F32((0..n).map(|_| rng.gen_range(-1e4f32..1e4)).collect()),
        ValueEncoding::Float64 => Samples::F64((0..n).map(|_| rng.gen_range(-1e6..1e6)).collect()),
        ValueEncoding::Int32 => Samples::I32((0..n).map(|_| rng.gen()).collect()),
    }
}

fn payload(rng: &mut ChaCha8Rng) -> Payload {
    let mut p = Payload::new();
    for i in 0..rng.gen_range(0..4) {
        let v = match rng.gen_range(0..4) {
            0 => PayloadValue::Bool(rng.gen()),
            1 => PayloadValue::Int(rng.gen()),
            2 => PayloadValue::Float(rng.gen_range(-1e9..1e9)),
            _ => PayloadValue::Text(format!("v{}", rng.gen::<u16>())),
        };
        p = p.with(format!("k{i}"), v);
    }
    p
}

pub fn random_session(seed: u64, limits: &Limits) -> SessionSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_streams = rng.gen_range(1..=limits.max_streams);
    let descriptors: Vec<StreamDescriptor> = (0..n_streams)
        .map(|i| {
            let labels: Vec<String> = (0..rng.gen_range(1..=limits.max_channels)).map(|c| format!("ch{c}")).collect();
            let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
            StreamDescriptor::new(
                format!("s{i}"),
                MODALITIES[rng.gen_range(0..MODALITIES.len())],
                &labels,
                RATES[rng.gen_range(0..RATES.len())],
                "uV",
            )
            .with_encoding(ENCODINGS[rng.gen_range(0..3)])
        })
        .collect();
    let marker_sources: Vec<String> = (0..rng.gen_range(0..3)).map(|i| format!("m{i}")).collect();
    let metadata = (0..rng.gen_range(0..3)).map(|i| (format!("note{i}"), format!("value {i}"))).collect();

    // per-stream generators, interleaved at random
    let mut next_seq = vec![0u64; n_streams];
    let mut next_ts: Vec<i64> = (0..n_streams).map(|_| rng.gen_range(-1_000_000_000..1_000_000_000)).collect();
    let mut left: Vec<usize> = (0..n_streams).map(|_| rng.gen_range(0..=limits.max_chunks)).collect();
    let mut next_marker = vec![0u64; marker_sources.len()];
    let mut markers_left = if marker_sources.is_empty() { 0 } else { rng.gen_range(0..=limits.max_markers) };
    let mut records = Vec::new();
    while left.iter().any(|&l| l > 0) || markers_left > 0 {
        if markers_left > 0 && (rng.gen_bool(0.2) || left.iter().all(|&l| l == 0)) {
            let s = rng.gen_range(0..marker_sources.len());
            records.push(SessionRecord::Marker(EventMarker {
                marker_id: next_marker[s],
                primitive: InteractionPrimitive::new(
                    PrimitiveKind::ALL[rng.gen_range(0..4)],
                    format!("e{}", records.len()),
                )
                .with_payload(payload(&mut rng)),
                device_ts: rng.gen_bool(0.5).then(|| DeviceTs::from_nanos(rng.gen())),
                host_ts: HostTs::from_nanos(rng.gen()),
                source: marker_sources[s].clone(),
            }));
            next_marker[s] += rng.gen_range(1..3);
            markers_left -= 1;
            continue;
        }
        let candidates: Vec<usize> = (0..n_streams).filter(|&i| left[i] > 0).collect();
        let i = candidates[rng.gen_range(0..candidates.len())];
        let d = &descriptors[i];
        let period = d.sample_period_ns().unwrap();
        let n = rng.gen_range(1..=limits.max_chunk_len);
        let per_sample = rng.gen_bool(0.25).then(|| {
            let mut t = next_ts[i];
            (0..n)
                .map(|_| {
                    t += rng.gen_range(1..2 * period as i64);
                    DeviceTs::from_nanos(t)
                })
                .collect::<Vec<_>>()
        });
        let chunk = Chunk {
            stream_id: d.stream_id.clone(),
            sequence_number: next_seq[i],
            first_device_ts: per_sample.as_ref().map_or(DeviceTs::from_nanos(next_ts[i]), |p| p[0]),
            sample_period_ns: period,
            per_sample_device_ts: per_sample,
            host_receipt_ts: HostTs::from_nanos(rng.gen_range(0..i64::MAX)),
            n_channels: d.n_channels(),
            samples: samples(&mut rng, d.value_encoding, n * d.n_channels()),
        };
        next_ts[i] = chunk.last_device_ts().nanos() + period as i64;
        next_seq[i] += rng.gen_range(1..3);
        left[i] -= 1;
        records.push(SessionRecord::Chunk(chunk));
    }
    SessionSpec { descriptors, marker_sources, metadata, records }
}

/// Writes `spec` and finalizes it.
pub fn write_session(spec: &SessionSpec, path: &Path) {
    let mut w = create_session(
        spec.descriptors.clone(),
        spec.marker_sources.clone(),
        spec.metadata.clone(),
        path,
        WriterOptions::default(),
    )
    .unwrap();
    for r in &spec.records {
        match r {
            SessionRecord::Chunk(c) => w.append_chunk(c).unwrap(),
            SessionRecord::Marker(m) => w.append_marker(m).unwrap(),
        }
    }
    w.finalize().unwrap();
}
