//! Control plane for offloading THz channel-model computations to edge or
//! cloud clusters, with a discrete-event simulator and a live HTTP runtime.

pub mod domain;
pub mod estimator;
pub mod loadgen;
pub mod metrics;
pub mod orchestration;
pub mod placement;
pub mod runtime;
pub mod store;
