//! Error type shared across the simulator.

use std::fmt;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the simulator.
#[derive(Debug)]
pub enum Error {
    /// A configuration or input file could not be parsed.
    Parse { path: String, msg: String },
    /// An input violated a structural invariant (non-positive bandwidth, ...).
    Validation(String),
    /// A node name or id does not exist in the platform.
    UnknownNode(String),
    /// Every actor is blocked and no event is pending.
    Deadlock { blocked: Vec<(usize, String)> },
    /// A queue with this name already exists in the simulation.
    DuplicateName(String),
    /// Operation on a queue that has been closed.
    QueueClosed(String),
    /// A mapping file does not provide the expected number of slots.
    CountMismatch { expected: usize, found: usize },
    /// Invalid workflow configuration (e.g. stride does not divide N).
    Config(String),
    /// Core count not supported by the ratio generator.
    InvalidCoreCount(u32),
    /// A scenario cannot be mapped onto the platform.
    Infeasible(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
    /// Model evaluation on degenerate inputs (all stage costs zero).
    DegenerateInput(String),
    /// A trace is missing labels or contains unpaired events.
    MalformedTrace(String),
    /// Stage extraction needs at least three steps.
    InsufficientSteps { rho: u64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Parse { path, msg } => write!(f, "parse error in {path}: {msg}"),
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::UnknownNode(name) => write!(f, "unknown node: {name}"),
            Error::Deadlock { blocked } => {
                write!(f, "deadlock detected; blocked actors:")?;
                for (id, what) in blocked {
                    write!(f, " [actor {id}: {what}]")?;
                }
                Ok(())
            }
            Error::DuplicateName(name) => write!(f, "duplicate queue name: {name}"),
            Error::QueueClosed(name) => write!(f, "queue closed: {name}"),
            Error::CountMismatch { expected, found } => {
                write!(f, "mapping provides {found} slots, expected {expected}")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::InvalidCoreCount(c) => {
                write!(f, "core count {c} is not a power of two >= 2")
            }
            Error::Infeasible(msg) => write!(f, "infeasible scenario: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::DegenerateInput(msg) => write!(f, "degenerate input: {msg}"),
            Error::MalformedTrace(msg) => write!(f, "malformed trace: {msg}"),
            Error::InsufficientSteps { rho } => {
                write!(f, "insufficient steps: rho = {rho}, need at least 3")
            }
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
