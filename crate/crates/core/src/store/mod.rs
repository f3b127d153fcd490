//! OSF1 session container: a single file holding a header record, the
//! interleaved chunk and marker records of every stream, and a trailing
//! manifest located through a fixed-size footer.
//!
//! Each record carries its own CRC32C. At finalize the writer also records
//! a CRC32C rollup per stream and a SHA-256 over everything before the
//! manifest. A file without a footer is treated as a crashed recording:
//! [`open_session`] refuses it, [`open_session_recovering`] salvages every
//! intact record up to the first torn one.

mod export;
pub mod format;
mod reader;
mod writer;

use thiserror::Error;

pub use export::{export_csv, export_markers_csv, ExportClock};
pub use reader::{open_session, open_session_recovering, ReadMode, RecordIter, SessionReader, SessionRecord};
pub use writer::{create_session, SessionWriter, WriterOptions};

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy violation: {0}")]
    PolicyViolation(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("unknown stream {0:?}")]
    UnknownStream(String),
    #[error("sequence regression on {stream_id}: {got} after {last}")]
    SequenceRegression { stream_id: String, last: u64, got: u64 },
    #[error(transparent)]
    InvalidChunk(#[from] ModelError),
    #[error("session already finalized")]
    AlreadyFinalized,
    #[error("corrupt session at byte {offset}: {reason}")]
    CorruptSession { offset: u64, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
