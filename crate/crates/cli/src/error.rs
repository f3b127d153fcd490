use std::fmt;

use observa::ingest::IngestError;
use observa::markers::MarkerError;
use observa::simulator::SimError;
use observa::store::StoreError;

/// Failure classes, each with a fixed exit code. Codes 1 and 2 are
/// reserved for WARN and FAIL verdicts from `verify`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Io,
    Connection,
    Integrity,
    Policy,
    Acquisition,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 3,
            Kind::Io => 4,
            Kind::Connection => 5,
            Kind::Integrity => 6,
            Kind::Policy => 7,
            Kind::Acquisition => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Io => "io",
            Kind::Connection => "connection",
            Kind::Integrity => "integrity",
            Kind::Policy => "policy",
            Kind::Acquisition => "acquisition",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    /// The single structured line printed on stderr.
    pub fn line(&self) -> String {
        serde_json::json!({
            "error": self.kind.name(),
            "exit_code": self.kind.exit_code(),
            "message": self.message,
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.name(), self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Kind::Io, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(Kind::Usage, e.to_string())
    }
}

fn store_kind(e: &StoreError) -> Kind {
    match e {
        StoreError::Io(_) | StoreError::Json(_) | StoreError::Csv(_) => Kind::Io,
        StoreError::PolicyViolation(_) => Kind::Policy,
        StoreError::CorruptSession { .. } => Kind::Integrity,
        StoreError::InvalidDescriptor(_) | StoreError::UnknownStream(_) => Kind::Usage,
        StoreError::SequenceRegression { .. } | StoreError::InvalidChunk(_) | StoreError::AlreadyFinalized => {
            Kind::Acquisition
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        Self::new(store_kind(&e), e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let kind = match &e {
            IngestError::HandshakeMismatch { .. } | IngestError::ConnectionFailed { .. } => Kind::Connection,
            IngestError::IntegrityFailure(_) | IngestError::CorruptSession { .. } => Kind::Integrity,
            IngestError::InvalidConfig(_) | IngestError::InvalidTransition { .. } => Kind::Usage,
            IngestError::Store(s) => store_kind(s),
            IngestError::Protocol { .. }
            | IngestError::Silence { .. }
            | IngestError::SinkFailure(_)
            | IngestError::Overflow(_) => Kind::Acquisition,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let kind = match &e {
            SimError::ConfigInvalid(_) => Kind::Usage,
            SimError::BindFailure { .. } => Kind::Connection,
            SimError::Io(_) => Kind::Io,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<MarkerError> for CliError {
    fn from(e: MarkerError) -> Self {
        let kind = match &e {
            MarkerError::Parse(_) | MarkerError::Validation(_) => Kind::Usage,
            MarkerError::PolicyViolation(_) => Kind::Policy,
            MarkerError::Sink(_) | MarkerError::Io(_) => Kind::Io,
        };
        Self::new(kind, e.to_string())
    }
}
