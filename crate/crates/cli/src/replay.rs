use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use observa::ingest::{
    replay_source, replay_stream_sources, run_acquisition, AcquisitionConfig, ReplaySpeed, Source, SourceItem,
    StopToken,
};
use observa::store::{create_session, WriterOptions};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::resolve;
use crate::error::{CliError, Kind};

/// Re-emit a recorded session, either as JSON lines or into a new session
/// file.
#[derive(Args, Debug, Serialize)]
pub struct ReplayArgs {
    /// Session file to replay.
    session: Option<PathBuf>,
    /// `unpaced`, or a multiple of real time such as `1`, `10x`, `0.5x`.
    #[arg(long)]
    speed: Option<String>,
    /// Record the replay into this new session file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ReplayConfig {
    session: Option<PathBuf>,
    speed: String,
    out: Option<PathBuf>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { session: None, speed: "unpaced".into(), out: None }
    }
}

pub fn run(args: &ReplayArgs, config: Option<&Path>) -> Result<i32, CliError> {
    let cfg: ReplayConfig = resolve("replay", args, config)?;
    let session = cfg.session.clone().ok_or_else(|| CliError::usage("replay needs a session file"))?;
    if !session.exists() {
        return Err(CliError::new(Kind::Io, format!("{}: no such file", session.display())));
    }
    let speed: ReplaySpeed = cfg.speed.parse()?;
    match &cfg.out {
        Some(out) => rerecord(&session, speed, out),
        None => emit_lines(&session, speed),
    }
}

fn emit_lines(session: &Path, speed: ReplaySpeed) -> Result<i32, CliError> {
    let source = replay_source(session, speed)?;
    let mut out = std::io::stdout().lock();
    let mut count = 0u64;
    for item in source {
        let line = match item? {
            SourceItem::Chunk(c) => json!({
                "type": "chunk",
                "stream_id": c.stream_id,
                "seq": c.sequence_number,
                "first_device_ts_ns": c.first_device_ts.nanos(),
                "host_receipt_ts_ns": c.host_receipt_ts.nanos(),
                "n_samples": c.n_samples(),
            }),
            SourceItem::Marker(m) => json!({
                "type": "marker",
                "source": m.source,
                "marker_id": m.marker_id,
                "kind": m.primitive.kind.as_str(),
                "label": m.primitive.label,
                "host_ts_ns": m.host_ts.nanos(),
            }),
        };
        match writeln!(out, "{line}") {
            // the reader went away (e.g. `| head`); that is not a failure
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(0),
            r => r?,
        }
        count += 1;
    }
    out.flush()?;
    eprintln!("replayed {count} records");
    Ok(0)
}

fn rerecord(session: &Path, speed: ReplaySpeed, out: &Path) -> Result<i32, CliError> {
    let probe = replay_source(session, ReplaySpeed::Unpaced)?;
    let sources = replay_stream_sources(session, speed)?;
    let (markers, data): (Vec<_>, Vec<_>) = sources.iter().map(|s| s.descriptor().clone()).partition(|d| d.is_marker());
    let mut metadata = probe.header().metadata.clone();
    metadata.insert("replayed_from".into(), probe.session_id().to_string());
    drop(probe);

    let mut writer = create_session(
        data,
        markers.into_iter().map(|d| d.stream_id).collect(),
        metadata,
        out,
        WriterOptions::default(),
    )?;
    let sources: Vec<Box<dyn Source>> = sources.into_iter().map(|s| Box::new(s) as Box<dyn Source>).collect();
    let stop = StopToken::new();
    let on_signal = stop.clone();
    ctrlc::set_handler(move || on_signal.stop())
        .map_err(|e| CliError::new(Kind::Io, format!("cannot install signal handler: {e}")))?;
    let result = run_acquisition(sources, &mut writer, &AcquisitionConfig { stop, ..AcquisitionConfig::default() });
    let finalized = writer.finalize();
    let stats = result?;
    let manifest = finalized?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    eprintln!("replayed into session {} ({} samples)", manifest.session_id, stats.total_samples());
    let failed = stats.failed_streams();
    if !failed.is_empty() {
        return Err(CliError::new(Kind::Integrity, format!("replay stopped early on: {}", failed.join(", "))));
    }
    Ok(0)
}
