//! Building blocks for federated training rounds whose aggregation runs
//! inside simulated enclaves, is attested end to end, and is committed to a
//! hash-chained ledger by majority agreement on the aggregated model's hash.
//!
//! Everything in this crate is deterministic given its inputs and seeds:
//! honest participants must arrive at bit-identical model bytes, or hash
//! agreement across nodes would be impossible.

#![forbid(unsafe_code)]

pub mod attestation;
pub mod crypto;
pub mod digest;
pub mod enclave;
pub mod ledger;
pub mod params;
