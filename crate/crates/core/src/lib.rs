//! Learned estimation of the yaw mounting angle of a vehicle IMU.

pub mod angle;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod net;
pub mod pipeline;
pub mod realtime;
pub mod seed;
pub mod signal;
pub mod simulate;

pub use error::{Error, ErrorKind};
