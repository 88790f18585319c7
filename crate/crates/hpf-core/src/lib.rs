//! Hierarchical partitioning forecasters.
//!
//! This crate implements local online learning over a hierarchical partition
//! of feature space. The feature space is split recursively into segments;
//! every segment carries a constrained linear forecaster trained by a
//! second-order online learner, and divisible segments additionally blend
//! their own forecast with the forecast bubbling up from below via a
//! two-expert switching mixture. The result competes with every constant
//! partitioning forecaster (a fixed induced partition with one fixed linear
//! forecaster per segment) at `O(k log T)` regret for exp-concave losses.
//!
//! The crate is organized around three concerns:
//!
//! - **Learning**: [`partition`], [`losses`], [`ftal`], [`switching`] and
//!   [`hpf`] implement the forecasters themselves.
//! - **Certification**: [`oracle`] computes best-in-hindsight competitors by
//!   brute force and machine-checks every regret inequality the learners are
//!   supposed to satisfy, producing [`oracle::BoundCertificate`] rows.
//! - **Application**: [`nowcast`] wires the forecaster into a desk-scale
//!   synthetic precipitation nowcasting pipeline (switching-based motion
//!   estimation, motion-path features, MSE/CSI verification).
//!
//! [`experiments`] exposes the batch entry points used by the `hpf` CLI.

pub mod experiments;
pub mod ftal;
pub mod hpf;
mod linalg;
pub mod losses;
pub mod nowcast;
pub mod oracle;
pub mod partition;
pub mod switching;

pub use ftal::{FtalState, ParameterSet};
pub use hpf::{CpfModel, HpfModel, RunLog};
pub use losses::LossFunction;
pub use partition::{HierarchicalPartition, InducedPartition, SegmentId};
pub use switching::SwitchingState;

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A feature vector fell outside the partition's root region.
    #[error("feature vector outside the root region: {0}")]
    OutOfDomain(String),
    /// A configured resource cap (e.g. induced-partition count) was exceeded.
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
    /// An iterative numeric routine failed to converge.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A runtime guard caught a violated regularity condition.
    #[error("contract violation: {0}")]
    ContractViolation(String),
    /// Malformed serialized data.
    #[error("parse error: {0}")]
    Parse(String),
    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
