//! Hash-chained storage of committed global models and the majority rule
//! that decides what gets appended.
//!
//! Consensus tallies the model hashes carried by valid attestation verdicts
//! and commits a hash only when strictly more than half of all nodes stand
//! behind it (ties abort). Committed blocks are byte-identical across honest
//! nodes: the block timestamp is the agreed logical tick, the quote list is
//! assembled deterministically, and every field is either recomputable or
//! covered by a digest, so any stored-chain tampering is detectable.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::attestation::{AttestationVerdict, Quote, VerdictReason};
use crate::digest::{sha256, sha256_parts, Hash32};
use crate::params::{canonical_deserialize, canonical_encoded_len, ParameterVector};

pub const CHAIN_MAGIC: [u8; 4] = *b"FCTC";
pub const CHAIN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("round {round} has no committed decision")]
    NotCommitted { round: u64 },
    #[error("model bytes hash to {got}, committed hash is {want}")]
    CommitMismatch { want: Hash32, got: Hash32 },
    #[error("chain verification failed at height {}: {}", .fault.height, .fault.cause.as_str())]
    Integrity { fault: ChainFault },
    #[error("chain holds no committed model")]
    NotFound,
    #[error("block {index}: {reason}")]
    Malformed { index: u64, reason: String },
    #[error("chain file: {0}")]
    BadFile(String),
}

/// First invariant violation found while walking a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainFault {
    pub height: u64,
    pub cause: FaultCause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultCause {
    /// The stored body does not match its digest.
    Body,
    /// The model bytes inside the body do not hash to `model_hash`.
    ModelHash,
    /// The stored header hash does not recompute from the header fields.
    Header,
    /// The link to the parent (or the genesis anchor) is broken.
    Link,
}

impl FaultCause {
    pub fn as_str(&self) -> &'static str {
        match self {
            FaultCause::Body => "body",
            FaultCause::ModelHash => "model-hash",
            FaultCause::Header => "header",
            FaultCause::Link => "link",
        }
    }
}

/// One committed global model.
///
/// `body` is the canonical model bytes followed by the serialized quote
/// list; `body_digest` covers all of it, `model_hash` just the model bytes,
/// and `header_hash` the six header fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub round: u64,
    pub prev_hash: Hash32,
    pub logical_time: u64,
    pub model_hash: Hash32,
    pub body_digest: Hash32,
    pub header_hash: Hash32,
    pub body: Vec<u8>,
}

fn encode_quote_list(quotes: &[Quote]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(quotes.len() as u32).to_le_bytes());
    for q in quotes {
        let bytes = q.to_bytes();
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&bytes);
    }
    out
}

fn decode_quote_list(bytes: &[u8]) -> Option<Vec<Quote>> {
    if bytes.len() < 4 {
        return None;
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().ok()?) as usize;
    let mut pos = 4;
    let mut quotes = Vec::with_capacity(count);
    for _ in 0..count {
        if bytes.len() < pos + 4 {
            return None;
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().ok()?) as usize;
        pos += 4;
        if bytes.len() < pos + len {
            return None;
        }
        quotes.push(Quote::from_bytes(&bytes[pos..pos + len]).ok()?);
        pos += len;
    }
    if pos != bytes.len() {
        return None;
    }
    Some(quotes)
}

impl Block {
    fn compute_header_hash(
        height: u64,
        round: u64,
        prev_hash: &Hash32,
        logical_time: u64,
        model_hash: &Hash32,
        body_digest: &Hash32,
    ) -> Hash32 {
        sha256_parts(&[
            &height.to_le_bytes(),
            &round.to_le_bytes(),
            prev_hash.as_bytes(),
            &logical_time.to_le_bytes(),
            model_hash.as_bytes(),
            body_digest.as_bytes(),
        ])
    }

    fn build(
        height: u64,
        round: u64,
        prev_hash: Hash32,
        logical_time: u64,
        model_bytes: &[u8],
        quotes: &[Quote],
    ) -> Block {
        let mut body = Vec::with_capacity(model_bytes.len() + 64);
        body.extend_from_slice(model_bytes);
        body.extend_from_slice(&encode_quote_list(quotes));
        let model_hash = sha256(model_bytes);
        let body_digest = sha256(&body);
        let header_hash =
            Self::compute_header_hash(height, round, &prev_hash, logical_time, &model_hash, &body_digest);
        Block { height, round, prev_hash, logical_time, model_hash, body_digest, header_hash, body }
    }

    /// Splits the body into the model bytes and the quote list.
    pub fn parse_body(&self) -> Option<(&[u8], Vec<Quote>)> {
        let model_len = canonical_encoded_len(&self.body).ok()?;
        let quotes = decode_quote_list(&self.body[model_len..])?;
        Some((&self.body[..model_len], quotes))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * 3 + 32 * 3 + 8 + self.body.len());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(self.prev_hash.as_bytes());
        out.extend_from_slice(&self.logical_time.to_le_bytes());
        out.extend_from_slice(self.model_hash.as_bytes());
        out.extend_from_slice(self.body_digest.as_bytes());
        out.extend_from_slice(self.header_hash.as_bytes());
        out.extend_from_slice(&(self.body.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8], index: u64) -> Result<Self, LedgerError> {
        const FIXED: usize = 8 + 8 + 32 + 8 + 32 + 32 + 32 + 8;
        if bytes.len() < FIXED {
            return Err(LedgerError::Malformed { index, reason: "block record truncated".into() });
        }
        let height = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
        let round = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let prev_hash = Hash32::from_slice(&bytes[16..48]).expect("32 bytes");
        let logical_time = u64::from_le_bytes(bytes[48..56].try_into().expect("8 bytes"));
        let model_hash = Hash32::from_slice(&bytes[56..88]).expect("32 bytes");
        let body_digest = Hash32::from_slice(&bytes[88..120]).expect("32 bytes");
        let header_hash = Hash32::from_slice(&bytes[120..152]).expect("32 bytes");
        let body_len = u64::from_le_bytes(bytes[152..160].try_into().expect("8 bytes")) as usize;
        if bytes.len() != FIXED + body_len {
            return Err(LedgerError::Malformed { index, reason: "body length mismatch".into() });
        }
        Ok(Block {
            height,
            round,
            prev_hash,
            logical_time,
            model_hash,
            body_digest,
            header_hash,
            body: bytes[FIXED..].to_vec(),
        })
    }
}

/// What consensus decided for one round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Committed(Hash32),
    Aborted(AbortReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    /// No hash was backed by strictly more than half of all nodes.
    NoMajority,
}

/// Why a node's submission was left out of the tally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exclusion {
    InvalidVerdict(VerdictReason),
    MissingProposal,
    /// Proposal bytes hash differently than the verified verdict claims.
    ProposalHashMismatch,
}

/// A node's broadcast proposal: its aggregated model bytes plus the quote
/// backing them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub model_bytes: Vec<u8>,
    pub quote: Quote,
}

/// Tally outcome for one round. `committed_model`/`committed_quotes` hold
/// the byte-identical material every honest node appends on commit.
#[derive(Debug, Clone)]
pub struct ConsensusState {
    pub round: u64,
    pub verdicts: BTreeMap<u32, AttestationVerdict>,
    pub tally: BTreeMap<Hash32, u32>,
    pub decision: Decision,
    pub exclusions: Vec<(u32, Exclusion)>,
    pub committed_model: Option<Vec<u8>>,
    pub committed_quotes: Vec<Quote>,
}

/// Counts valid verdicts whose proposal bytes actually hash to the attested
/// value, then commits the best-supported hash if it clears a strict
/// majority of `n`. The maximum-count hash wins; count ties break to the
/// lexicographically smallest hash before the majority check.
pub fn consensus_round(
    round: u64,
    verdicts: BTreeMap<u32, AttestationVerdict>,
    proposals: &BTreeMap<u32, Proposal>,
    n: u32,
) -> ConsensusState {
    assert!(n >= 1, "consensus needs at least one node");
    let mut tally: BTreeMap<Hash32, u32> = BTreeMap::new();
    let mut exclusions = Vec::new();
    let mut matched: BTreeMap<u32, Hash32> = BTreeMap::new();

    for (&node, verdict) in &verdicts {
        if !verdict.valid {
            exclusions.push((node, Exclusion::InvalidVerdict(verdict.reason.expect("invalid has reason"))));
            continue;
        }
        let attested = verdict.model_hash.expect("valid verdict carries a hash");
        let Some(proposal) = proposals.get(&node) else {
            exclusions.push((node, Exclusion::MissingProposal));
            continue;
        };
        if sha256(&proposal.model_bytes) != attested {
            exclusions.push((node, Exclusion::ProposalHashMismatch));
            continue;
        }
        *tally.entry(attested).or_insert(0) += 1;
        matched.insert(node, attested);
    }

    // Ascending BTreeMap order means the first strict maximum is also the
    // smallest hash among ties.
    let mut best: Option<(Hash32, u32)> = None;
    for (&hash, &count) in &tally {
        if best.map_or(true, |(_, c)| count > c) {
            best = Some((hash, count));
        }
    }

    let decision = match best {
        Some((hash, count)) if 2 * count > n => Decision::Committed(hash),
        _ => Decision::Aborted(AbortReason::NoMajority),
    };

    let (committed_model, committed_quotes) = match &decision {
        Decision::Committed(hash) => {
            let mut model = None;
            let mut quotes = Vec::new();
            for (&node, h) in &matched {
                if h == hash {
                    let p = &proposals[&node];
                    if model.is_none() {
                        model = Some(p.model_bytes.clone());
                    }
                    quotes.push(p.quote.clone());
                }
            }
            (model, quotes)
        }
        Decision::Aborted(_) => (None, Vec::new()),
    };

    ConsensusState { round, verdicts, tally, decision, exclusions, committed_model, committed_quotes }
}

/// One node's copy of the ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Chain {
    /// Starts a chain at the genesis block anchoring the initial model, so
    /// the first training round has a well-defined starting point.
    pub fn new(genesis_model_bytes: &[u8]) -> Self {
        let genesis = Block::build(0, 0, Hash32::zero(), 0, genesis_model_bytes, &[]);
        Self { blocks: vec![genesis] }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().height
    }

    /// Appends the committed model for `round`. Refuses bytes that do not
    /// hash to the committed value.
    pub fn append_block(
        &mut self,
        round: u64,
        logical_time: u64,
        model_bytes: &[u8],
        quotes: &[Quote],
        committed: Hash32,
    ) -> Result<&Block, LedgerError> {
        let got = sha256(model_bytes);
        if got != committed {
            return Err(LedgerError::CommitMismatch { want: committed, got });
        }
        let prev = self.tip().header_hash;
        let block = Block::build(self.blocks.len() as u64, round, prev, logical_time, model_bytes, quotes);
        self.blocks.push(block);
        Ok(self.tip())
    }

    /// Appends from a consensus decision; errors if the round aborted.
    pub fn append_committed(
        &mut self,
        state: &ConsensusState,
        logical_time: u64,
    ) -> Result<&Block, LedgerError> {
        match &state.decision {
            Decision::Committed(hash) => {
                let model = state
                    .committed_model
                    .as_ref()
                    .ok_or(LedgerError::NotCommitted { round: state.round })?;
                self.append_block(state.round, logical_time, model, &state.committed_quotes, *hash)
            }
            Decision::Aborted(_) => Err(LedgerError::NotCommitted { round: state.round }),
        }
    }

    /// Recomputes every digest and link; reports the first violation.
    pub fn verify(&self) -> Result<(), ChainFault> {
        for (i, block) in self.blocks.iter().enumerate() {
            let height = i as u64;
            if sha256(&block.body) != block.body_digest {
                return Err(ChainFault { height, cause: FaultCause::Body });
            }
            match block.parse_body() {
                Some((model_bytes, _)) => {
                    if sha256(model_bytes) != block.model_hash {
                        return Err(ChainFault { height, cause: FaultCause::ModelHash });
                    }
                }
                None => return Err(ChainFault { height, cause: FaultCause::ModelHash }),
            }
            let recomputed = Block::compute_header_hash(
                block.height,
                block.round,
                &block.prev_hash,
                block.logical_time,
                &block.model_hash,
                &block.body_digest,
            );
            if recomputed != block.header_hash {
                return Err(ChainFault { height, cause: FaultCause::Header });
            }
            if block.height != height {
                return Err(ChainFault { height, cause: FaultCause::Link });
            }
            if i == 0 {
                if !block.prev_hash.is_zero() {
                    return Err(ChainFault { height, cause: FaultCause::Link });
                }
            } else if block.prev_hash != self.blocks[i - 1].header_hash {
                return Err(ChainFault { height, cause: FaultCause::Link });
            }
        }
        Ok(())
    }

    /// Returns the newest committed model, but only after the whole chain
    /// verifies from genesis to tip.
    pub fn get_latest_model(&self) -> Result<(ParameterVector, &Block), LedgerError> {
        if self.blocks.len() <= 1 {
            return Err(LedgerError::NotFound);
        }
        self.verify().map_err(|fault| LedgerError::Integrity { fault })?;
        let tip = self.tip();
        let (model_bytes, _) = tip
            .parse_body()
            .ok_or_else(|| LedgerError::Malformed { index: tip.height, reason: "unparseable body".into() })?;
        let model = canonical_deserialize(model_bytes)
            .map_err(|e| LedgerError::Malformed { index: tip.height, reason: e.to_string() })?;
        Ok((model, tip))
    }

    /// Serializes the chain: `magic | version u32 LE | block count u64 LE`
    /// then each block with a u64 LE length prefix. Bit-exact, so two honest
    /// nodes' dumps compare equal bytewise.
    pub fn dump(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHAIN_MAGIC);
        out.extend_from_slice(&CHAIN_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.blocks.len() as u64).to_le_bytes());
        for block in &self.blocks {
            let bytes = block.to_bytes();
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    /// Parses a dump. Structural damage is reported with the block index;
    /// hash checking is `verify`'s job.
    pub fn load(bytes: &[u8]) -> Result<Self, LedgerError> {
        if bytes.len() < 16 {
            return Err(LedgerError::BadFile("file shorter than the preamble".into()));
        }
        if bytes[0..4] != CHAIN_MAGIC {
            return Err(LedgerError::BadFile("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHAIN_FORMAT_VERSION {
            return Err(LedgerError::BadFile(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let mut pos = 16usize;
        let mut blocks = Vec::new();
        for index in 0..count {
            if bytes.len() < pos + 8 {
                return Err(LedgerError::Malformed { index, reason: "length prefix truncated".into() });
            }
            let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes")) as usize;
            pos += 8;
            if bytes.len() < pos + len {
                return Err(LedgerError::Malformed { index, reason: "block record truncated".into() });
            }
            blocks.push(Block::from_bytes(&bytes[pos..pos + len], index)?);
            pos += len;
        }
        if pos != bytes.len() {
            return Err(LedgerError::Malformed {
                index: count.saturating_sub(1),
                reason: format!("{} trailing bytes", bytes.len() - pos),
            });
        }
        if blocks.is_empty() {
            return Err(LedgerError::BadFile("chain holds no blocks".into()));
        }
        Ok(Self { blocks })
    }
}
