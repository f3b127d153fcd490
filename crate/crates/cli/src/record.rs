use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Args;
use observa::ingest::{
    galea_synth_sources, line_marker_source, open_network_source, run_acquisition, AcquisitionConfig, AcquisitionStats,
    NetworkOptions, OverflowPolicy, Source, StopToken, SynthPacing,
};
use observa::model::{galea_beta_descriptors, DenyList, Profile, StreamDescriptor};
use observa::simulator::MARKER_STREAM_ID;
use observa::store::{create_session, WriterOptions};
use serde::{Deserialize, Serialize};

use crate::config::resolve;
use crate::error::{CliError, Kind};

/// Record a session from a device, a simulator or the synthetic generator.
#[derive(Args, Debug, Serialize)]
pub struct RecordArgs {
    /// Session file to create.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Device base address; stream i is served on port + i.
    #[arg(long, value_name = "HOST:PORT")]
    connect: Option<String>,
    /// One stream endpoint (repeatable).
    #[arg(long = "stream", value_name = "ID=HOST:PORT")]
    streams: Vec<String>,
    /// Record the built-in synthetic generator.
    #[arg(long)]
    synth: bool,
    /// Generate synthetic data as fast as possible.
    #[arg(long)]
    unpaced: bool,
    /// Stop after this many seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// With --connect, do not expect the simulator marker stream.
    #[arg(long)]
    no_sim_markers: bool,
    /// Read marker lines from a file, FIFO or `-` for stdin.
    #[arg(long, value_name = "PATH")]
    marker_pipe: Option<String>,
    #[arg(long)]
    queue_capacity: Option<usize>,
    /// block, drop-oldest or fail.
    #[arg(long)]
    overflow_policy: Option<String>,
    #[arg(long)]
    connect_timeout_ms: Option<u64>,
    #[arg(long)]
    silence_timeout_ms: Option<u64>,
    /// Session metadata entry (repeatable).
    #[arg(long = "meta", value_name = "KEY=VALUE")]
    metadata: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RecordConfig {
    out: Option<PathBuf>,
    connect: Option<String>,
    streams: Vec<String>,
    synth: bool,
    unpaced: bool,
    duration: Option<f64>,
    profile: String,
    seed: u64,
    no_sim_markers: bool,
    marker_pipe: Option<String>,
    queue_capacity: usize,
    overflow_policy: String,
    connect_timeout_ms: u64,
    silence_timeout_ms: u64,
    metadata: Vec<String>,
}

impl Default for RecordConfig {
    fn default() -> Self {
        Self {
            out: None,
            connect: None,
            streams: Vec::new(),
            synth: false,
            unpaced: false,
            duration: None,
            profile: Profile::GaleaBeta.name().into(),
            seed: 42,
            no_sim_markers: false,
            marker_pipe: None,
            queue_capacity: 256,
            overflow_policy: "block".into(),
            connect_timeout_ms: 2000,
            silence_timeout_ms: 5000,
            metadata: Vec::new(),
        }
    }
}

/// Synthetic recordings without --duration stop after this long.
const DEFAULT_SYNTH_S: f64 = 60.0;

pub fn run(args: &RecordArgs, config: Option<&Path>) -> Result<i32, CliError> {
    let cfg: RecordConfig = resolve("record", args, config)?;
    let out = cfg.out.clone().ok_or_else(|| CliError::usage("record needs --out"))?;
    let modes = [cfg.connect.is_some(), !cfg.streams.is_empty(), cfg.synth];
    if modes.iter().filter(|m| **m).count() != 1 {
        return Err(CliError::usage("choose exactly one of --connect, --stream or --synth"));
    }
    cfg.profile.parse::<Profile>().map_err(|e| CliError::usage(e.to_string()))?;
    if let Some(d) = cfg.duration {
        if !(d.is_finite() && d > 0.0) {
            return Err(CliError::usage("--duration must be positive"));
        }
    }
    let policy: OverflowPolicy = cfg.overflow_policy.parse()?;
    let metadata = parse_metadata(&cfg.metadata)?;

    let stop = StopToken::new();
    let on_signal = stop.clone();
    ctrlc::set_handler(move || on_signal.stop())
        .map_err(|e| CliError::new(Kind::Io, format!("cannot install signal handler: {e}")))?;

    // Every connection is made before the session file exists, so a bad
    // endpoint leaves nothing on disk.
    let mut sources: Vec<Box<dyn Source>> = Vec::new();
    let mut data = Vec::new();
    let mut marker_sources = Vec::new();
    if cfg.synth {
        let descs = galea_beta_descriptors();
        let pacing = if cfg.unpaced { SynthPacing::Unpaced } else { SynthPacing::RealTime };
        let duration = cfg.duration.unwrap_or(DEFAULT_SYNTH_S);
        for s in galea_synth_sources(&descs, duration, cfg.seed, pacing, observa::host_now())? {
            sources.push(Box::new(s));
        }
        data = descs;
    } else {
        let opts = NetworkOptions {
            connect_timeout: Duration::from_millis(cfg.connect_timeout_ms),
            silence_timeout: Duration::from_millis(cfg.silence_timeout_ms),
            ..NetworkOptions::default()
        };
        for (desc, addr) in endpoints(&cfg)? {
            log::info!("connecting {} at {addr}", desc.stream_id);
            let src = open_network_source(&addr, desc.clone(), opts.clone())?;
            if desc.is_marker() {
                marker_sources.push(desc.stream_id);
            } else {
                data.push(desc);
            }
            sources.push(Box::new(src));
        }
    }
    if let Some(pipe) = &cfg.marker_pipe {
        let reader: Box<dyn Read + Send> = if pipe == "-" {
            Box::new(std::io::stdin())
        } else {
            Box::new(
                std::fs::File::open(pipe).map_err(|e| CliError::new(Kind::Io, format!("marker pipe {pipe}: {e}")))?,
            )
        };
        sources.push(Box::new(line_marker_source(reader, "external", DenyList::interpretative())));
        marker_sources.push("external".into());
    }

    let mut writer = create_session(data, marker_sources, metadata, &out, WriterOptions::default())?;
    eprintln!("recording {} streams to {}", sources.len(), out.display());
    if !cfg.synth {
        if let Some(d) = cfg.duration {
            stop_after(stop.clone(), Duration::from_secs_f64(d));
        }
    }
    let acq = AcquisitionConfig { queue_capacity: cfg.queue_capacity, overflow_policy: policy, stop };
    let result = run_acquisition(sources, &mut writer, &acq);
    let finalized = writer.finalize();
    let stats = match result {
        Ok(stats) => stats,
        Err(e) => {
            if let Err(f) = finalized {
                log::error!("finalize after failed run: {f}");
            }
            return Err(e.into());
        }
    };
    let manifest = finalized?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    eprintln!("session {} finalized: {}", manifest.session_id, summary(&stats));
    let failed = stats.failed_streams();
    if !failed.is_empty() {
        return Err(CliError::new(Kind::Acquisition, format!("streams failed: {}", failed.join(", "))));
    }
    Ok(0)
}

fn summary(stats: &AcquisitionStats) -> String {
    format!("{} samples in {:.2} s, {} dropped", stats.total_samples(), stats.elapsed_s, stats.total_overflow_drops())
}

fn stop_after(stop: StopToken, after: Duration) {
    std::thread::spawn(move || {
        let deadline = Instant::now() + after;
        while !stop.is_stopped() {
            let now = Instant::now();
            if now >= deadline {
                stop.stop();
                break;
            }
            std::thread::sleep((deadline - now).min(Duration::from_millis(50)));
        }
    });
}

/// `(descriptor, address)` for every network stream to open.
fn endpoints(cfg: &RecordConfig) -> Result<Vec<(StreamDescriptor, String)>, CliError> {
    let galea = galea_beta_descriptors();
    if let Some(base) = &cfg.connect {
        let (host, port) = base
            .rsplit_once(':')
            .and_then(|(h, p)| p.parse::<u16>().ok().map(|p| (h, p)))
            .ok_or_else(|| CliError::usage(format!("bad --connect address {base:?}")))?;
        let mut descs = galea;
        if !cfg.no_sim_markers {
            descs.push(StreamDescriptor::marker(MARKER_STREAM_ID));
        }
        return descs
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                let p = port as usize + i;
                if p > u16::MAX as usize {
                    return Err(CliError::usage("port range exhausted"));
                }
                Ok((d, format!("{host}:{p}")))
            })
            .collect();
    }
    cfg.streams
        .iter()
        .map(|spec| {
            let (id, addr) = spec
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("bad --stream {spec:?}, want ID=HOST:PORT")))?;
            let desc = if id == MARKER_STREAM_ID {
                StreamDescriptor::marker(MARKER_STREAM_ID)
            } else {
                galea
                    .iter()
                    .find(|d| d.stream_id == id)
                    .cloned()
                    .ok_or_else(|| CliError::usage(format!("unknown stream {id:?}")))?
            };
            Ok((desc, addr.to_string()))
        })
        .collect()
}

fn parse_metadata(entries: &[String]) -> Result<BTreeMap<String, String>, CliError> {
    entries
        .iter()
        .map(|e| {
            e.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CliError::usage(format!("bad --meta {e:?}, want KEY=VALUE")))
        })
        .collect()
}
