//! The message bus: a queue of immutable protocol messages processed in
//! (tick, ordinal) order. Ordinals are assigned at enqueue time, so the
//! processing order is a pure function of the enqueue order.

use std::collections::{BTreeMap, BTreeSet};

use fedchain_core::attestation::EncryptedQuote;
use fedchain_core::attestation::Quote;
use fedchain_core::crypto::Ciphertext;
use fedchain_core::digest::Hash32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ActorId {
    Edge(u32),
    Node(u32),
}

/// Everything that travels between actors.
#[derive(Debug, Clone)]
pub enum Message {
    /// Edge server -> node: one cluster's encrypted local model.
    EncryptedLocalModel { round: u64, cluster: u32, ciphertext: Ciphertext, dataset_size: u64 },
    /// Node -> node: a quote sealed to the attestation service.
    EncryptedQuoteMsg { round: u64, from_node: u32, quote: EncryptedQuote },
    /// Node -> node: the sender's aggregate bytes plus the quote backing
    /// them; what consensus tallies against the verdicts.
    HashAnnouncement { round: u64, from_node: u32, model_bytes: Vec<u8>, quote: Quote },
    /// Node -> node: the sender's consensus decision for the round.
    CommitAnnouncement { round: u64, from_node: u32, committed: Option<Hash32> },
    /// Node -> edge server: the distributing node's chain, for fetch-and-
    /// verify before adopting the new global model.
    GlobalModelDelivery { round: u64, chain_dump: Vec<u8> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MessageKind {
    LocalModel,
    Quote,
    Announcement,
    Commit,
    Delivery,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::EncryptedLocalModel { .. } => MessageKind::LocalModel,
            Message::EncryptedQuoteMsg { .. } => MessageKind::Quote,
            Message::HashAnnouncement { .. } => MessageKind::Announcement,
            Message::CommitAnnouncement { .. } => MessageKind::Commit,
            Message::GlobalModelDelivery { .. } => MessageKind::Delivery,
        }
    }
}

#[derive(Debug)]
pub struct Event {
    pub tick: u64,
    pub ordinal: u64,
    pub dest: ActorId,
    pub msg: Message,
}

#[derive(Debug, Default)]
pub struct EventQueue {
    pending: BTreeMap<(u64, u64), (ActorId, Message)>,
    next_ordinal: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, tick: u64, dest: ActorId, msg: Message) -> u64 {
        let ordinal = self.next_ordinal;
        self.next_ordinal += 1;
        self.pending.insert((tick, ordinal), (dest, msg));
        ordinal
    }

    pub fn pop(&mut self) -> Option<Event> {
        let (&(tick, ordinal), _) = self.pending.iter().next()?;
        let (dest, msg) = self.pending.remove(&(tick, ordinal)).expect("key just observed");
        Some(Event { tick, ordinal, dest, msg })
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Run-wide accounting: every enqueue and every processing is recorded, so
/// tests can assert that each broadcast created exactly one event per
/// recipient and nothing was processed twice or left behind.
#[derive(Debug, Default)]
pub struct EventAudit {
    pub enqueued: u64,
    pub processed: u64,
    pub per_kind_enqueued: BTreeMap<MessageKind, u64>,
    processed_ordinals: BTreeSet<u64>,
    /// (key_id, nonce) of every ciphertext that crossed the bus.
    pub nonces_seen: Vec<(u32, [u8; 12])>,
    pub duplicate_processing: bool,
}

impl EventAudit {
    pub fn record_enqueue(&mut self, msg: &Message) {
        self.enqueued += 1;
        *self.per_kind_enqueued.entry(msg.kind()).or_insert(0) += 1;
        if let Message::EncryptedLocalModel { ciphertext, .. } = msg {
            self.nonces_seen.push((ciphertext.key_id, ciphertext.nonce));
        }
    }

    pub fn record_processed(&mut self, ev: &Event) {
        self.processed += 1;
        if !self.processed_ordinals.insert(ev.ordinal) {
            self.duplicate_processing = true;
        }
    }

    pub fn nonce_pairs_are_unique(&self) -> bool {
        let set: BTreeSet<_> = self.nonces_seen.iter().collect();
        set.len() == self.nonces_seen.len()
    }
}
