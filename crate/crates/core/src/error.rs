//! Library-wide error type. Variants are coarse on purpose: callers mostly
//! need to distinguish misconfiguration from runtime faults and from bad
//! artifacts on disk.

use std::fmt;

#[derive(Debug)]
pub enum Error {
    /// Invalid parameters: stability violations, bad ranges, inconsistent shapes.
    Config(String),
    /// Simulation produced a non-finite value (explicit scheme blew up).
    Instability(String),
    /// Training diverged (non-finite loss).
    Divergence(String),
    /// A referenced file is absent.
    Missing(String),
    /// A file exists but its content cannot be parsed.
    Parse {
        path: String,
        line: Option<u64>,
        msg: String,
    },
    /// A file parses but its content is inconsistent (truncated payload,
    /// shape/header mismatch, checksum-style violations).
    Corrupt(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "invalid configuration: {m}"),
            Error::Instability(m) => write!(f, "numerical instability: {m}"),
            Error::Divergence(m) => write!(f, "training diverged: {m}"),
            Error::Missing(m) => write!(f, "missing file: {m}"),
            Error::Parse { path, line, msg } => match line {
                Some(n) => write!(f, "parse error in {path}, line {n}: {msg}"),
                None => write!(f, "parse error in {path}: {msg}"),
            },
            Error::Corrupt(m) => write!(f, "corrupt artifact: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
