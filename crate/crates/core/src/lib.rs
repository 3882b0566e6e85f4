//! Protocol library and discrete-event simulator for IRIS, a low-duty-cycle
//! TDMA scheme that grows a multi-hop relay route along a pipeline of
//! wireless sensor nodes and keeps it alive under packet loss, clock drift,
//! and node failures.
//!
//! The crate is layered: [`protocol`] holds the per-node state machines,
//! [`channel`], [`energy`], and [`topology`] model the environment,
//! [`engine`] advances a whole network slot by slot, and [`metrics`]
//! summarises the resulting traces. [`scenario`] ties a complete experiment
//! description together so a run is reproducible from one TOML file and a
//! seed.

pub mod campaign;
pub mod channel;
pub mod energy;
pub mod engine;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod scenario;
pub mod topology;
pub mod trace;

pub use engine::{run, EngineError};
pub use scenario::{Scenario, ScenarioError};
pub use trace::{RunSummary, RunTrace, TraceDetail};
