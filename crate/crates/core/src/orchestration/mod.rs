//! Request routing, replica bookkeeping and scaling.

pub mod autoscale;
pub mod cluster;
pub mod directory;
pub mod plan;
pub mod register;
pub mod ssi;

pub use cluster::{
    Cluster, ClusterConfig, ClusterError, Command, Completion, Counters, FailureTarget, FlightId, Mode, Submission,
    Ticket,
};
