use std::io::Write;

use super::{SessionReader, StoreError};
use crate::model::{ClockMapping, DeviceTs};
use crate::timebase::HostTimeline;

/// Which timebase exported timestamps are expressed in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExportClock {
    Device,
    Host(ClockMapping),
}

impl ExportClock {
    fn stamp(&self, device: DeviceTs) -> i64 {
        match self {
            ExportClock::Device => device.nanos(),
            ExportClock::Host(m) => m.map_to_host(device).nanos(),
        }
    }
}

/// Writes one stream as CSV: `timestamp_ns,<channel labels...>`, one row
/// per sample. Returns the number of data rows.
pub fn export_csv<W: Write>(
    reader: &SessionReader,
    stream_id: &str,
    clock: ExportClock,
    out: W,
) -> Result<usize, StoreError> {
    let desc = reader.descriptor(stream_id)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp_ns".to_string()];
    header.extend(desc.channel_labels.iter().cloned());
    w.write_record(&header)?;

    let mut rows = 0;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for chunk in reader.read_chunks(stream_id, None)? {
        for k in 0..chunk.n_samples() {
            row.clear();
            row.push(clock.stamp(chunk.device_ts(k)).to_string());
            for ch in 0..chunk.n_channels {
                row.push(format_value(&chunk.samples, k * chunk.n_channels + ch));
            }
            w.write_record(&row)?;
            rows += 1;
        }
    }
    w.flush()?;
    Ok(rows)
}

fn format_value(s: &crate::model::Samples, i: usize) -> String {
    use crate::model::Samples;
    match s {
        Samples::F32(v) => v[i].to_string(),
        Samples::F64(v) => v[i].to_string(),
        Samples::I32(v) => v[i].to_string(),
    }
}

/// Writes all session markers as CSV, with their position on `stream_id`'s
/// sample grid. Markers outside the stream span get empty index cells.
pub fn export_markers_csv<W: Write>(
    reader: &SessionReader,
    stream_id: &str,
    mapping: &ClockMapping,
    out: W,
) -> Result<usize, StoreError> {
    let desc = reader.descriptor(stream_id)?;
    let chunks = reader.read_chunks(stream_id, None)?;
    let timeline = HostTimeline::new(&chunks, desc, mapping);
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "marker_id",
        "source",
        "kind",
        "label",
        "host_ts_ns",
        "device_ts_ns",
        "sample_index",
        "fractional_offset",
        "payload",
    ])?;
    let markers = reader.read_markers()?;
    for m in &markers {
        let aligned = timeline.align(m, mapping).ok();
        w.write_record([
            m.marker_id.to_string(),
            m.source.clone(),
            m.primitive.kind.as_str().to_string(),
            m.primitive.label.clone(),
            m.host_ts.nanos().to_string(),
            m.device_ts.map(|d| d.nanos().to_string()).unwrap_or_default(),
            aligned.as_ref().map(|a| a.sample_index.to_string()).unwrap_or_default(),
            aligned.as_ref().map(|a| a.fractional_offset.to_string()).unwrap_or_default(),
            serde_json::to_string(&m.primitive.payload)?,
        ])?;
    }
    w.flush()?;
    Ok(markers.len())
}
