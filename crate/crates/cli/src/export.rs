use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use observa::model::ClockMapping;
use observa::store::{export_csv, export_markers_csv, open_session, ExportClock, SessionReader};
use observa::timebase::estimate_clock_mapping;
use observa::verify::alignment_pairs;
use serde::{Deserialize, Serialize};

use crate::config::resolve;
use crate::error::{CliError, Kind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Clock {
    /// Raw device timestamps.
    #[default]
    Device,
    /// Device timestamps mapped through the stream's fitted clock.
    Host,
}

/// Write one stream, or the session markers, as CSV.
#[derive(Args, Debug, Serialize)]
pub struct ExportArgs {
    /// Session file to read.
    session: Option<PathBuf>,
    /// Stream to export (for --markers: the stream whose sample grid
    /// markers are located on).
    #[arg(long)]
    stream: Option<String>,
    #[arg(long, value_enum)]
    clock: Option<Clock>,
    /// Export markers instead of samples.
    #[arg(long)]
    markers: bool,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExportConfig {
    session: Option<PathBuf>,
    stream: Option<String>,
    clock: Clock,
    markers: bool,
    out: Option<PathBuf>,
}

pub fn run(args: &ExportArgs, config: Option<&Path>) -> Result<i32, CliError> {
    let cfg: ExportConfig = resolve("export", args, config)?;
    let session = cfg.session.clone().ok_or_else(|| CliError::usage("export needs a session file"))?;
    let stream = cfg.stream.clone().ok_or_else(|| CliError::usage("export needs --stream"))?;
    if !session.exists() {
        return Err(CliError::new(Kind::Io, format!("{}: no such file", session.display())));
    }
    let reader = open_session(&session)?;
    reader.descriptor(&stream)?;

    let out: Box<dyn Write> = match &cfg.out {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let rows = if cfg.markers {
        let mapping = fitted(&reader, &stream)?;
        export_markers_csv(&reader, &stream, &mapping, out)?
    } else {
        let clock = match cfg.clock {
            Clock::Device => ExportClock::Device,
            Clock::Host => ExportClock::Host(fitted(&reader, &stream)?),
        };
        export_csv(&reader, &stream, clock, out)?
    };
    eprintln!("exported {rows} rows");
    Ok(0)
}

fn fitted(reader: &SessionReader, stream: &str) -> Result<ClockMapping, CliError> {
    let chunks = reader.read_chunks(stream, None)?;
    estimate_clock_mapping(&alignment_pairs(&chunks), true)
        .map_err(|e| CliError::new(Kind::Integrity, format!("cannot fit {stream} clock: {e}")))
}
