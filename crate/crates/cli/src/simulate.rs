use std::io::Write;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use observa::ingest::StopToken;
use observa::model::Profile;
use observa::simulator::{DropoutWindow, FaultSpec, ServeOptions, SimConfig, SimulatorServer};
use serde::{Deserialize, Serialize};

use crate::config::resolve;
use crate::error::{CliError, Kind};

/// Serve emulated device streams over TCP with optional clock and dropout
/// faults, then write the ground-truth report.
#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    profile: Option<String>,
    /// Seconds of data per stream.
    #[arg(long)]
    duration: Option<f64>,
    /// Device clock rate error in parts per million.
    #[arg(long, allow_hyphen_values = true)]
    skew_ppm: Option<f64>,
    /// Device clock offset in milliseconds.
    #[arg(long, allow_hyphen_values = true)]
    offset_ms: Option<f64>,
    /// Uniform timestamp jitter half-width in milliseconds.
    #[arg(long)]
    jitter_ms: Option<f64>,
    /// Withhold samples: START:DURATION[:STREAM], seconds (repeatable).
    #[arg(long = "dropout", value_name = "WINDOW")]
    dropouts: Vec<String>,
    /// First port; stream i listens on port + i. Port 0 picks free ports.
    #[arg(long, value_name = "HOST:PORT")]
    listen: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ground-truth report path; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Number of timing markers to plant.
    #[arg(long)]
    markers: Option<usize>,
    /// Send frames back to back instead of in real time.
    #[arg(long)]
    unpaced: bool,
    /// Hold frames during dropouts instead of losing them.
    #[arg(long)]
    stall: bool,
    /// Seconds to wait for the recorder to connect.
    #[arg(long)]
    accept_timeout: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    profile: String,
    duration: f64,
    skew_ppm: f64,
    offset_ms: f64,
    jitter_ms: f64,
    dropouts: Vec<String>,
    listen: String,
    seed: u64,
    report: Option<PathBuf>,
    markers: usize,
    unpaced: bool,
    stall: bool,
    accept_timeout: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            profile: Profile::GaleaBeta.name().into(),
            duration: 60.0,
            skew_ppm: 0.0,
            offset_ms: 0.0,
            jitter_ms: 0.0,
            dropouts: Vec::new(),
            listen: "127.0.0.1:9000".into(),
            seed: 42,
            report: None,
            markers: 10,
            unpaced: false,
            stall: false,
            accept_timeout: 30.0,
        }
    }
}

pub fn run(args: &SimulateArgs, config: Option<&Path>) -> Result<i32, CliError> {
    let cfg: SimulateConfig = resolve("simulate", args, config)?;
    cfg.profile.parse::<Profile>().map_err(|e| CliError::usage(e.to_string()))?;
    if !(cfg.accept_timeout.is_finite() && cfg.accept_timeout > 0.0) {
        return Err(CliError::usage("--accept-timeout must be positive"));
    }
    let dropout_windows = cfg.dropouts.iter().map(|d| d.parse::<DropoutWindow>()).collect::<Result<Vec<_>, _>>()?;
    let faults = FaultSpec {
        clock_skew_ppm: cfg.skew_ppm,
        clock_offset_ms: cfg.offset_ms,
        timestamp_jitter_ms: cfg.jitter_ms,
        dropout_windows,
        seed: cfg.seed,
        stall: cfg.stall,
    };
    let mut sim = SimConfig::galea_beta(cfg.duration, faults);
    sim.marker_count = cfg.markers;
    let listen: SocketAddr = cfg
        .listen
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .ok_or_else(|| CliError::usage(format!("bad --listen address {:?}", cfg.listen)))?;

    let server = SimulatorServer::bind(sim, listen)?;
    {
        let mut out = std::io::stdout().lock();
        for (id, addr) in server.endpoints() {
            writeln!(out, "listening {id} {addr}")?;
        }
        out.flush()?;
    }

    let stop = StopToken::new();
    let on_signal = stop.clone();
    ctrlc::set_handler(move || on_signal.stop())
        .map_err(|e| CliError::new(Kind::Io, format!("cannot install signal handler: {e}")))?;
    let opts = ServeOptions { paced: !cfg.unpaced, accept_timeout: Duration::from_secs_f64(cfg.accept_timeout) };
    let report = server.run(&stop, &opts)?;

    let json = report.to_json_pretty();
    match &cfg.report {
        Some(path) => std::fs::write(path, &json)?,
        None => println!("{json}"),
    }
    let emitted: u64 = report.streams.values().map(|s| s.samples_emitted).sum();
    let dropped: u64 = report.streams.values().map(|s| s.samples_dropped).sum();
    eprintln!("served {emitted} samples, {dropped} withheld, {} markers", report.markers_emitted);

    let unserved: Vec<String> = report
        .streams
        .iter()
        .filter(|(_, s)| !matches!(s.status.as_str(), "served" | "stopped"))
        .map(|(id, s)| format!("{id}: {}", s.status))
        .collect();
    if !unserved.is_empty() {
        return Err(CliError::new(Kind::Connection, format!("streams not fully served: {}", unserved.join(", "))));
    }
    Ok(0)
}
