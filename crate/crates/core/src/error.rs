//! Crate-level error and its process exit codes.

use crate::dataset::DatasetError;
use crate::eval::EvalError;
use crate::io::IoError;
use crate::net::{CheckpointError, NetError};
use crate::pipeline::PipelineError;
use crate::realtime::RealtimeError;
use crate::signal::SignalError;
use crate::simulate::SimError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// Coarse failure class used for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => EXIT_CONFIG,
            ErrorKind::Data => EXIT_DATA,
            ErrorKind::Numeric => EXIT_NUMERIC,
            ErrorKind::Io => EXIT_IO,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    File(#[from] IoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Realtime(#[from] RealtimeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{context}: {source}")]
    Os {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn os(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Os {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        use ErrorKind::*;
        match self {
            Error::Config(_) => Config,
            Error::Data(_) => Data,
            Error::File(IoError::Io { .. }) | Error::Os { .. } => Io,
            Error::File(_) => Data,
            Error::Checkpoint(CheckpointError::Io(_)) => Io,
            Error::Checkpoint(_) => Data,
            Error::Net(NetError::Config(_)) => Config,
            Error::Net(NetError::EmptyBatch) => Data,
            Error::Net(_) => Numeric,
            Error::Pipeline(PipelineError::Config(_)) => Config,
            Error::Pipeline(PipelineError::Sim(_)) => Config,
            Error::Pipeline(_) => Data,
            Error::Realtime(RealtimeError::Config(_)) => Config,
            Error::Realtime(RealtimeError::Model(_)) => Numeric,
            Error::Realtime(_) => Data,
            Error::Eval(EvalError::Io(_)) => Io,
            Error::Eval(EvalError::Realtime(RealtimeError::Model(_))) => Numeric,
            Error::Eval(_) => Data,
            Error::Signal(_) | Error::Dataset(_) => Data,
            Error::Sim(_) => Config,
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind().exit_code()
    }
}
