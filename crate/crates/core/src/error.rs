use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while building or solving a VVO instance.
#[derive(Debug, Error)]
pub enum VvoError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("duplicate node id {0}")]
    DuplicateNode(usize),

    #[error("node ids must be contiguous 1..N; missing {0}")]
    NonContiguousNodes(usize),

    #[error("disconnected layout: node {0} unreachable from the substation")]
    DisconnectedLayout(usize),

    #[error("zero-impedance line ({0}, {1})")]
    ZeroImpedance(usize, usize),

    #[error("unknown node {0}")]
    UnknownNode(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("configuration is not radial ({0:?})")]
    NotRadial(crate::grid::Radiality),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no records")]
    NoRecords,

    #[error("duplicate load record (node {node}, day {day}, hour {hour})")]
    DuplicateRecord { node: usize, day: u32, hour: u32 },

    #[error("no load data for node {node} hour {hour} in the averaging window")]
    MissingLoadData { node: usize, hour: usize },

    #[error("newton power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")]
    NotConverged { iterations: usize, mismatch: f64 },

    #[error("infeasible by construction: {0}")]
    InfeasibleByConstruction(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

pub type Result<T> = std::result::Result<T, VvoError>;

impl VvoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            VvoError::FileNotFound(path)
        } else {
            VvoError::Io { path, source }
        }
    }
}
