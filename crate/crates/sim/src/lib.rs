//! Deterministic discrete-event simulation of the full round loop: local
//! training at edge servers, encrypted transport to every blockchain node,
//! in-enclave aggregation, quote-based attestation, hash-majority consensus,
//! and ledger commits, with a fault plan for exercising the unhappy paths.
//!
//! A run is a pure function of its configuration: repeated runs produce
//! byte-identical chain dumps and metrics streams.

#![forbid(unsafe_code)]

pub mod config;
pub mod event;
pub mod metrics;
pub mod runner;
pub mod seed;

pub use config::{ConfigError, DataSource, FaultDirective, RoundsSel, SimConfig};
pub use event::{ActorId, Event, EventAudit, EventQueue, Message, MessageKind};
pub use metrics::{write_metrics, ClusterMetrics, ConsensusMetrics, MessageCounts, RoundMetrics};
pub use runner::{run_simulation, timing_sweep, SimError, SimOutput, SweepRow};
pub use seed::derive_seed;
