//! Multimodal biosignal acquisition and interaction-alignment toolkit.
//!
//! The crate captures timestamped sample streams and interaction markers,
//! puts them on a common host timebase, records them in a verifiable
//! single-file container and checks recorded sessions for integrity,
//! continuity and alignment. It performs no signal interpretation.
//!
//! | module | role |
//! |---|---|
//! | [`model`] | descriptors, chunks, timestamps, markers, manifests |
//! | [`timebase`] | clock fits, gap detection, resampling, marker alignment |
//! | [`ingest`] | network / synthetic / replay sources and the buffered acquisition loop |
//! | [`simulator`] | a device emulator with clock and dropout faults |
//! | [`markers`] | marker line protocol and scripted task harness |
//! | [`store`] | the OSF1 session container and CSV export |
//! | [`verify`] | integrity, continuity and alignment reports |

pub mod clock;
pub mod ingest;
pub mod markers;
pub mod model;
pub mod simulator;
pub mod store;
pub mod timebase;
pub mod verify;

pub use clock::host_now;
