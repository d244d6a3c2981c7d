use std::path::PathBuf;

use thiserror::Error;

use crate::field::{DeviceId, SlotKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("slot `{0}` is not declared by the program")]
    UndeclaredSlot(SlotKey),
    #[error("slot `{0}` written twice in one round")]
    DuplicateSlot(SlotKey),
    #[error("slot `{slot}` missing from the outgoing export")]
    IncompleteExport { slot: SlotKey },
    #[error("slot `{slot}`: expected {expected}, found {found}")]
    TypeMismatch {
        slot: SlotKey,
        expected: &'static str,
        found: &'static str,
    },
    #[error("device {other} is not a neighbor of {this}")]
    NotNeighbor { this: DeviceId, other: DeviceId },
    #[error("invalid block configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("parameter vector has length {actual}, shape needs {expected}")]
    ParamLength { expected: usize, actual: usize },
    #[error("non-finite parameter at index {0}")]
    NonFinite(usize),
    #[error("input has {actual} features, model expects {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("empty sample set")]
    EmptySet,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message} at byte offset {offset}")]
    Format {
        path: PathBuf,
        offset: usize,
        message: String,
    },
    #[error("image file has {images} items but label file has {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("region {region} has {available} samples, {needed} required")]
    Insufficient {
        region: usize,
        available: usize,
        needed: usize,
    },
    #[error("invalid partition request: {0}")]
    InvalidPartition(String),
    #[error("empty sample set")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("devices {0} and {1} share a position")]
    DuplicatePosition(DeviceId, DeviceId),
    #[error("communication range must be positive, got {0}")]
    InvalidRange(f64),
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("topology is not connected")]
    Disconnected,
    #[error("could not generate a connected layout after {0} attempts")]
    LayoutExhausted(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("aggregation over an empty set")]
    Empty,
    #[error("model shapes differ")]
    ShapeMismatch,
    #[error("invalid federated configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Top-level error for experiment runs.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
