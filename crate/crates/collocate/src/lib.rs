//! File formats, configuration, sweeps and plots around `collocate-core`,
//! plus the `collocate` command-line tool.

pub mod binfmt;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod report;
pub mod svg;
pub mod sweep;

use std::path::Path;

use sha2::{Digest, Sha256};

/// Command failures, each mapped to a process exit code.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Data(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let io = |e: std::io::Error| Error::Data(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, bytes).map_err(io)
}
