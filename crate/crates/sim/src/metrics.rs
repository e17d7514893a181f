//! Per-round outcome records, emitted as line-delimited JSON. Every field
//! is deterministic for a fixed configuration; wall-clock timing lives in
//! the sweep command instead, so metrics streams compare byte-for-byte
//! across repeated runs.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct ClusterMetrics {
    pub cluster: u32,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConsensusMetrics {
    /// "committed" or "aborted".
    pub decision: String,
    pub committed_hash: Option<String>,
    pub abort_reason: Option<String>,
    /// Model hash (hex) -> number of matching valid verdicts.
    pub tally: BTreeMap<String, u32>,
    /// Nodes that submitted nothing this round.
    pub absent: Vec<u32>,
    /// Nodes excluded from the tally, with the reason.
    pub excluded: Vec<(u32, String)>,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct MessageCounts {
    pub local_models: u64,
    pub encrypted_quotes: u64,
    pub hash_announcements: u64,
    pub commit_announcements: u64,
    pub model_deliveries: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundMetrics {
    pub schema_version: u32,
    pub round: u64,
    pub clusters: Vec<ClusterMetrics>,
    pub global_test_accuracy: f64,
    /// Logical ticks spent in the aggregation phase (one per enclave run).
    pub aggregation_duration_ticks: u64,
    pub consensus: ConsensusMetrics,
    pub chain_height: u64,
    pub messages: MessageCounts,
}

/// One JSON record per line, in round order.
pub fn write_metrics<W: Write>(w: &mut W, metrics: &[RoundMetrics]) -> std::io::Result<()> {
    for m in metrics {
        serde_json::to_writer(&mut *w, m)?;
        writeln!(w)?;
    }
    Ok(())
}
