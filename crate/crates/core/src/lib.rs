//! Flow-level simulator for relay capacity estimation in Tor-like networks.
//!
//! The pipeline: weighted three-hop path construction, max-min bandwidth
//! allocation, sequential dual-probe measurement, and a family of capacity
//! estimators whose output feeds back into the next round's weights.

pub mod allocator;
pub mod error;
pub mod estimators;
pub mod metrics;
pub mod network;
pub mod oracles;
pub mod rng;
pub mod simulator;

pub use allocator::{
    maxmin_allocate, measure_relay_pair, AllocationProblem, AllocationResult, MeasurementPair,
};
pub use error::{Error, Result};
pub use estimators::{EstimatorConfig, EstimatorKind, LikelihoodTable, QuantizationGrid};
pub use network::{compute_weights, ClassCounts, ConsensusRound, Network, Path, Relay, RelayClass};
pub use simulator::{run_monte_carlo, run_simulation, MonteCarloResult, RoundRecord, SimConfig};
