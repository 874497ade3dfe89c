//! Execution substrates for a [`Cluster`](crate::orchestration::Cluster):
//! a virtual-clock simulator and a live HTTP server.

pub mod live;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod wire;

pub use scenario::{load_scenario, load_scenarios, Scenario};
pub use sim::{run_simulation, SimOptions, SimOutcome};
