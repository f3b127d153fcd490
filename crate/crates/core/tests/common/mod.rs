#![allow(dead_code)]

pub mod gen;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;

use observa::ingest::{
    open_network_source, run_acquisition, AcquisitionConfig, AcquisitionStats, NetworkOptions, Source, StopToken,
};
use observa::model::{HostTs, StreamDescriptor};
use observa::simulator::{
    in_process_sources, ServeOptions, SimConfig, SimulatorReport, SimulatorServer, MARKER_STREAM_ID,
};
use observa::store::{create_session, WriterOptions};

/// Records an in-process simulation (virtual host stamps) into `path`.
pub fn record_in_process(config: &SimConfig, path: &Path) -> (SimulatorReport, AcquisitionStats) {
    let t0 = HostTs::from_nanos(1_700_000_000_000_000_000);
    let (sources, report) = in_process_sources(config, t0).expect("valid config");
    let mut w = create_session(
        config.descriptors.clone(),
        vec![MARKER_STREAM_ID.into()],
        BTreeMap::new(),
        path,
        WriterOptions::default(),
    )
    .unwrap();
    let stats = run_acquisition(sources, &mut w, &AcquisitionConfig::default()).unwrap();
    w.finalize().unwrap();
    (report, stats)
}

/// Serves `config` over loopback and records every stream into `path`.
pub fn record_network(config: &SimConfig, path: &Path, paced: bool) -> (SimulatorReport, AcquisitionStats) {
    let server = SimulatorServer::bind(config.clone(), "127.0.0.1:0".parse::<SocketAddr>().unwrap()).unwrap();
    let endpoints = server.endpoints();
    let stop = StopToken::new();
    let serve_stop = stop.clone();
    let opts = ServeOptions { paced, ..ServeOptions::default() };
    let sim = std::thread::spawn(move || server.run(&serve_stop, &opts));

    let mut descs: Vec<StreamDescriptor> = config.descriptors.clone();
    descs.push(StreamDescriptor::marker(MARKER_STREAM_ID));
    let sources: Vec<Box<dyn Source>> = descs
        .iter()
        .zip(&endpoints)
        .map(|(d, (_, addr))| {
            Box::new(open_network_source(&addr.to_string(), d.clone(), NetworkOptions::default()).unwrap())
                as Box<dyn Source>
        })
        .collect();
    let mut w = create_session(
        config.descriptors.clone(),
        vec![MARKER_STREAM_ID.into()],
        BTreeMap::new(),
        path,
        WriterOptions::default(),
    )
    .unwrap();
    let stats = run_acquisition(sources, &mut w, &AcquisitionConfig::default()).unwrap();
    w.finalize().unwrap();
    let report = sim.join().unwrap().unwrap();
    (report, stats)
}
