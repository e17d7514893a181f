//! The round-loop orchestrator. One logical thread drains the event queue
//! in (tick, ordinal) order; each network hop costs one tick and each
//! enclave aggregation costs one tick. All randomness flows from the master
//! seed, so a run is reproducible bit for bit.
//!
//! Per round: edge servers train from the committed global model and
//! broadcast encrypted local models to every node; each node's enclave
//! aggregates and the node quotes, seals the quote to the attestation
//! service, and announces its aggregate; nodes verify all quotes through
//! the service, tally hashes, commit on strict majority, and append the
//! block; the distributing node ships its chain to the edge servers, which
//! verify it end to end before adopting the new model.

use std::collections::BTreeMap;
use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use fedchain_core::attestation::{
    collect_verdicts, encrypt_quote, generate_quote, EnclaveRegistry, IasService, Quote,
    QuotingRegistry,
};
use fedchain_core::crypto::{
    derive_session_key, encrypt, sign, Ciphertext, EphemeralDh, IasKeyPair, SealingSession,
    SessionTranscript, SigningKeyPair, SymmetricKey,
};
use fedchain_core::digest::Hash32;
use fedchain_core::enclave::{
    AggregationEntry, AggregationInput, AggregationOutcome, AttestationReport, Enclave,
    EnclaveError,
};
use fedchain_core::ledger::{consensus_round, Chain, ConsensusState, Decision, Exclusion, Proposal};
use fedchain_core::params::{
    accuracy, canonical_serialize, evaluate, gen_synthetic, gen_synthetic_skewed, init_model,
    load_idx, local_train, Dataset, HyperParams, ModelSpec, ParameterVector, ParamsError,
};

use crate::config::{ConfigError, DataSource, FaultDirective, SimConfig};
use crate::event::{ActorId, EventAudit, EventQueue, Message, MessageKind};
use crate::metrics::{
    ClusterMetrics, ConsensusMetrics, MessageCounts, RoundMetrics, METRICS_SCHEMA_VERSION,
};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cluster {cluster}: training diverged at step {step}")]
    Divergence { cluster: u32, step: usize },
    #[error("integrity failure: {0}")]
    Integrity(String),
    #[error("protocol invariant violated: {0}")]
    Protocol(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// Everything a finished run leaves behind.
#[derive(Debug)]
pub struct SimOutput {
    /// Final ledger per node, in node-id order.
    pub chains: Vec<Chain>,
    pub metrics: Vec<RoundMetrics>,
    pub audit: EventAudit,
    /// Committed model hash per round; `None` where consensus aborted.
    pub committed_hashes: Vec<Option<Hash32>>,
    /// The model every edge server holds after the last round.
    pub final_model: ParameterVector,
    /// The genesis model each edge server started from.
    pub initial_model: ParameterVector,
    /// Inputs, exposed so tests can run independent baselines on the same data.
    pub train_datasets: Vec<Dataset>,
    pub test_set: Dataset,
    pub corrupted_node_count: u32,
}

struct EdgeServer {
    dataset: Dataset,
    model: ParameterVector,
    sessions: BTreeMap<u32, SealingSession>,
    last_train: Option<(f64, f64)>,
}

#[derive(Default)]
struct NodeRound {
    ciphertexts: BTreeMap<u32, (Ciphertext, u64)>,
    outcome: Option<AggregationOutcome>,
    quote: Option<Quote>,
    submissions: BTreeMap<u32, fedchain_core::attestation::EncryptedQuote>,
    proposals: BTreeMap<u32, Proposal>,
    peer_commits: BTreeMap<u32, Option<Hash32>>,
    consensus: Option<ConsensusState>,
    failure: Option<String>,
}

struct NodeActor {
    enclave: Enclave,
    quoting_key: SigningKeyPair,
    /// Deliberately unregistered; only the forge-report fault signs with it.
    forge_key: SigningKeyPair,
    chain: Chain,
    rng: ChaCha20Rng,
    round: NodeRound,
}

struct Simulation {
    cfg: SimConfig,
    spec: ModelSpec,
    hp: HyperParams,
    edges: Vec<EdgeServer>,
    nodes: Vec<NodeActor>,
    ias: IasService,
    queue: EventQueue,
    audit: EventAudit,
    tick: u64,
    counts: MessageCounts,
    metrics: Vec<RoundMetrics>,
    committed: Vec<Option<Hash32>>,
    test_set: Dataset,
    genesis_model: ParameterVector,
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    let mut sim = Simulation::setup(cfg.clone())?;
    for round in 1..=cfg.rounds {
        sim.run_round(round)?;
    }
    sim.apply_chain_tampering()?;
    sim.finish()
}

fn load_datasets(cfg: &SimConfig, spec: &ModelSpec) -> Result<(Vec<Dataset>, Dataset), SimError> {
    let (datasets, test_set) = match &cfg.data {
        DataSource::Synthetic { per_cluster, dim, skew, test_rows } => {
            let train_seed = derive_seed(cfg.master_seed, "train-data", 0);
            let test_seed = derive_seed(cfg.master_seed, "test-data", 0);
            let datasets =
                gen_synthetic_skewed(cfg.clusters as usize, *per_cluster, *dim, train_seed, *skew);
            let rows = test_rows.unwrap_or(*per_cluster);
            let test = gen_synthetic(1, rows, *dim, test_seed).remove(0);
            (datasets, test)
        }
        DataSource::Idx { clusters, test } => {
            let mut datasets = Vec::with_capacity(clusters.len());
            for (i, pair) in clusters.iter().enumerate() {
                let ds = load_idx(&pair.images, &pair.labels, i as u32)
                    .map_err(|e| SimError::Config(ConfigError::Invalid(e.to_string())))?;
                datasets.push(ds);
            }
            let test = load_idx(&test.images, &test.labels, 0)
                .map_err(|e| SimError::Config(ConfigError::Invalid(e.to_string())))?;
            (datasets, test)
        }
    };
    for ds in datasets.iter().chain(std::iter::once(&test_set)) {
        if ds.dim() != spec.input_dim() {
            return Err(SimError::Config(ConfigError::Invalid(format!(
                "dataset dim {} does not match model input dim {}",
                ds.dim(),
                spec.input_dim()
            ))));
        }
        if let Some(&bad) = ds.labels().iter().find(|&&l| l as usize >= spec.class_count()) {
            return Err(SimError::Config(ConfigError::Invalid(format!(
                "label {bad} out of range for {} classes",
                spec.class_count()
            ))));
        }
    }
    Ok((datasets, test_set))
}

impl Simulation {
    fn setup(cfg: SimConfig) -> Result<Self, SimError> {
        let spec = cfg.model_spec()?;
        let hp = cfg.hyperparams()?;
        let (datasets, test_set) = load_datasets(&cfg, &spec)?;

        let genesis_model = init_model(&spec, derive_seed(cfg.master_seed, "init-model", 0));
        let genesis_bytes = canonical_serialize(&genesis_model);

        let mut service_rng =
            ChaCha20Rng::seed_from_u64(derive_seed(cfg.master_seed, "service-keys", 0));
        let ias_keys = IasKeyPair::generate(&mut service_rng);
        let mut enclave_registry =
            EnclaveRegistry::new(fedchain_core::enclave::enclave_measurement(), 1);
        let mut quoting_registry = QuotingRegistry::new();

        let mut nodes = Vec::with_capacity(cfg.nodes as usize);
        for j in 0..cfg.nodes {
            let mut key_rng =
                ChaCha20Rng::seed_from_u64(derive_seed(cfg.master_seed, "node-keys", j as u64));
            let att_key = SigningKeyPair::generate(&mut key_rng, &format!("enclave-{j}"));
            let quoting_key = SigningKeyPair::generate(&mut key_rng, &format!("quoting-{j}"));
            let forge_key = SigningKeyPair::generate(&mut key_rng, &format!("forge-{j}"));
            let enclave = Enclave::new(j, 1, att_key);
            enclave_registry.register(j, enclave.attestation_public());
            quoting_registry.register(j, quoting_key.public_bytes());
            nodes.push(NodeActor {
                enclave,
                quoting_key,
                forge_key,
                chain: Chain::new(&genesis_bytes),
                rng: ChaCha20Rng::seed_from_u64(derive_seed(cfg.master_seed, "node-rng", j as u64)),
                round: NodeRound::default(),
            });
        }

        let mut edges = Vec::with_capacity(cfg.clusters as usize);
        for (i, dataset) in datasets.into_iter().enumerate() {
            edges.push(EdgeServer {
                dataset,
                model: genesis_model.clone(),
                sessions: BTreeMap::new(),
                last_train: None,
            });
            let i = i as u32;
            for j in 0..cfg.nodes {
                let pair = i as u64 * cfg.nodes as u64 + j as u64;
                let mut kex_rng =
                    ChaCha20Rng::seed_from_u64(derive_seed(cfg.master_seed, "session-key", pair));
                let edge_eph = EphemeralDh::generate(&mut kex_rng);
                let node_eph = EphemeralDh::generate(&mut kex_rng);
                let transcript = SessionTranscript {
                    initiator_id: i,
                    responder_id: j,
                    session: pair,
                    initiator_public: edge_eph.public_bytes(),
                    responder_public: node_eph.public_bytes(),
                };
                let key_id = pair as u32;
                let edge_key = derive_session_key(edge_eph, &transcript, key_id)
                    .map_err(|e| SimError::Internal(e.to_string()))?;
                let node_key = derive_session_key(node_eph, &transcript, key_id)
                    .map_err(|e| SimError::Internal(e.to_string()))?;
                // Key confirmation: both derivations must agree.
                let probe = encrypt(b"key-confirm", &edge_key, u64::MAX);
                if fedchain_core::crypto::decrypt(&probe, &node_key).is_err() {
                    return Err(SimError::Protocol(format!(
                        "session key disagreement for cluster {i} and node {j}"
                    )));
                }
                edges[i as usize].sessions.insert(j, SealingSession::new(edge_key));
                nodes[j as usize].enclave.install_cluster_key(i, node_key);
            }
        }

        Ok(Self {
            ias: IasService::new(ias_keys, enclave_registry, quoting_registry),
            cfg,
            spec,
            hp,
            edges,
            nodes,
            queue: EventQueue::new(),
            audit: EventAudit::default(),
            tick: 0,
            counts: MessageCounts::default(),
            metrics: Vec::new(),
            committed: Vec::new(),
            test_set,
            genesis_model,
        })
    }

    fn fault_active(&self, round: u64, pred: impl Fn(&FaultDirective, u64) -> bool) -> bool {
        self.cfg.faults.iter().any(|f| pred(f, round))
    }

    fn tampers_ciphertext(&self, cluster: u32, node: u32, round: u64) -> bool {
        self.fault_active(round, |f, r| {
            matches!(f, FaultDirective::TamperCiphertext { cluster: c, node: n, rounds }
                if *c == cluster && *n == node && rounds.applies(r))
        })
    }

    fn corrupts_aggregate(&self, node: u32, round: u64) -> bool {
        self.fault_active(round, |f, r| {
            matches!(f, FaultDirective::CorruptAggregator { node: n, rounds }
                if *n == node && rounds.applies(r))
        })
    }

    fn forges_report(&self, node: u32, round: u64) -> bool {
        self.fault_active(round, |f, r| {
            matches!(f, FaultDirective::ForgeReport { node: n, rounds }
                if *n == node && rounds.applies(r))
        })
    }

    fn is_silent(&self, node: u32, round: u64) -> bool {
        self.fault_active(round, |f, r| {
            matches!(f, FaultDirective::Silent { node: n, rounds }
                if *n == node && rounds.applies(r))
        })
    }

    /// Stages then enqueues a batch of messages one hop (one tick) out.
    fn post(&mut self, staged: Vec<(ActorId, Message)>) {
        for (dest, msg) in staged {
            self.audit.record_enqueue(&msg);
            match msg.kind() {
                MessageKind::LocalModel => self.counts.local_models += 1,
                MessageKind::Quote => self.counts.encrypted_quotes += 1,
                MessageKind::Announcement => self.counts.hash_announcements += 1,
                MessageKind::Commit => self.counts.commit_announcements += 1,
                MessageKind::Delivery => self.counts.model_deliveries += 1,
            }
            self.queue.send(self.tick + 1, dest, msg);
        }
    }

    /// Delivers every pending event, advancing the logical clock.
    fn drain(&mut self, round: u64) -> Result<(), SimError> {
        while let Some(ev) = self.queue.pop() {
            self.tick = self.tick.max(ev.tick);
            self.audit.record_processed(&ev);
            match (ev.dest, ev.msg) {
                (
                    ActorId::Node(j),
                    Message::EncryptedLocalModel { round: r, cluster, ciphertext, dataset_size },
                ) if r == round => {
                    self.nodes[j as usize]
                        .round
                        .ciphertexts
                        .insert(cluster, (ciphertext, dataset_size));
                }
                (ActorId::Node(j), Message::EncryptedQuoteMsg { round: r, from_node, quote })
                    if r == round =>
                {
                    self.nodes[j as usize].round.submissions.insert(from_node, quote);
                }
                (
                    ActorId::Node(j),
                    Message::HashAnnouncement { round: r, from_node, model_bytes, quote },
                ) if r == round => {
                    self.nodes[j as usize]
                        .round
                        .proposals
                        .insert(from_node, Proposal { model_bytes, quote });
                }
                (ActorId::Node(j), Message::CommitAnnouncement { round: r, from_node, committed })
                    if r == round =>
                {
                    self.nodes[j as usize].round.peer_commits.insert(from_node, committed);
                }
                (ActorId::Edge(i), Message::GlobalModelDelivery { round: r, chain_dump })
                    if r == round =>
                {
                    self.edge_adopt(i, round, &chain_dump)?;
                }
                (dest, msg) => {
                    return Err(SimError::Protocol(format!(
                        "unexpected {:?} for {dest:?} in round {round}",
                        msg.kind()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fetch-and-verify: load the delivered chain, verify it from genesis
    /// to tip, and only then adopt the contained model.
    fn edge_adopt(&mut self, edge: u32, round: u64, dump: &[u8]) -> Result<(), SimError> {
        let chain = Chain::load(dump).map_err(|e| SimError::Integrity(e.to_string()))?;
        let (model, block) =
            chain.get_latest_model().map_err(|e| SimError::Integrity(e.to_string()))?;
        if block.round != round {
            return Err(SimError::Protocol(format!(
                "delivered block is for round {}, expected {round}",
                block.round
            )));
        }
        if !model.matches(&self.spec) {
            return Err(SimError::Protocol("delivered model does not fit the model spec".into()));
        }
        self.edges[edge as usize].model = model;
        Ok(())
    }

    fn run_round(&mut self, round: u64) -> Result<(), SimError> {
        self.counts = MessageCounts::default();
        for node in &mut self.nodes {
            node.round = NodeRound::default();
        }

        // Local training and encrypted broadcast to every node.
        let mut staged = Vec::new();
        for i in 0..self.edges.len() as u32 {
            let tampered: Vec<bool> =
                (0..self.cfg.nodes).map(|j| self.tampers_ciphertext(i, j, round)).collect();
            let hp = HyperParams {
                seed: derive_seed(self.hp.seed, "local-train", round << 20 | i as u64),
                ..self.hp
            };
            let edge = &mut self.edges[i as usize];
            let local = local_train(&edge.model, &self.spec, &edge.dataset, &hp).map_err(|e| {
                match e {
                    ParamsError::Diverged { step } => SimError::Divergence { cluster: i, step },
                    other => SimError::Internal(other.to_string()),
                }
            })?;
            edge.last_train = Some(
                evaluate(&local, &self.spec, &edge.dataset)
                    .map_err(|e| SimError::Internal(e.to_string()))?,
            );
            let bytes = canonical_serialize(&local);
            let size = edge.dataset.len() as u64;
            for j in 0..self.cfg.nodes {
                let mut ct = edge
                    .sessions
                    .get_mut(&j)
                    .expect("session established at setup")
                    .encrypt_next(&bytes);
                if tampered[j as usize] {
                    ct.body[0] ^= 0x01;
                }
                staged.push((
                    ActorId::Node(j),
                    Message::EncryptedLocalModel {
                        round,
                        cluster: i,
                        ciphertext: ct,
                        dataset_size: size,
                    },
                ));
            }
        }
        self.post(staged);
        self.drain(round)?;

        // In-enclave aggregation; one tick per enclave run.
        let mut aggregation_ticks = 0u64;
        for j in 0..self.cfg.nodes {
            let corrupts = self.corrupts_aggregate(j, round);
            let forges = self.forges_report(j, round);
            let entries: Vec<AggregationEntry> = self.nodes[j as usize]
                .round
                .ciphertexts
                .iter()
                .map(|(&cluster_id, (ct, size))| AggregationEntry {
                    cluster_id,
                    ciphertext: ct.clone(),
                    dataset_size: *size,
                })
                .collect();
            let input = AggregationInput { round, entries };
            self.tick += 1;
            aggregation_ticks += 1;
            match self.nodes[j as usize].enclave.aggregate(&input) {
                Ok(outcome) => {
                    let outcome = if corrupts {
                        corrupt_outcome(&self.spec, &self.nodes[j as usize].enclave, outcome, round)?
                    } else {
                        outcome
                    };
                    let node = &self.nodes[j as usize];
                    let quote = if forges {
                        let honest = node.enclave.attest(&outcome.global_model, round);
                        let forged = AttestationReport {
                            signature: sign(&honest.payload(), &node.forge_key).to_vec(),
                            ..honest
                        };
                        Quote {
                            signature: sign(&forged.to_bytes(), &node.quoting_key).to_vec(),
                            report: forged,
                            quoting_node: j,
                        }
                    } else {
                        generate_quote(&outcome.report, &node.quoting_key, j, self.ias.enclave_registry())
                            .map_err(|e| SimError::Internal(e.to_string()))?
                    };
                    let node = &mut self.nodes[j as usize];
                    node.round.outcome = Some(outcome);
                    node.round.quote = Some(quote);
                }
                Err(EnclaveError::DecryptionFailed { cluster_id, .. }) => {
                    // The round produces nothing on this node.
                    self.nodes[j as usize].round.failure =
                        Some(format!("aggregation aborted: cluster {cluster_id}"));
                }
                Err(other) => return Err(SimError::Internal(other.to_string())),
            }
        }

        // Quote and aggregate announcement broadcast.
        let mut staged = Vec::new();
        for j in 0..self.cfg.nodes {
            if self.is_silent(j, round) {
                continue;
            }
            let node = &mut self.nodes[j as usize];
            let (Some(outcome), Some(quote)) = (&node.round.outcome, node.round.quote.clone())
            else {
                continue;
            };
            let model_bytes = canonical_serialize(&outcome.global_model);
            let eq = encrypt_quote(&quote, &self.ias.public_key(), &mut node.rng);
            for peer in 0..self.cfg.nodes {
                staged.push((
                    ActorId::Node(peer),
                    Message::EncryptedQuoteMsg { round, from_node: j, quote: eq.clone() },
                ));
                staged.push((
                    ActorId::Node(peer),
                    Message::HashAnnouncement {
                        round,
                        from_node: j,
                        model_bytes: model_bytes.clone(),
                        quote: quote.clone(),
                    },
                ));
            }
        }
        self.post(staged);
        self.drain(round)?;

        // Attestation verdicts and the consensus tally, then the decision
        // broadcast.
        let mut staged = Vec::new();
        for j in 0..self.cfg.nodes {
            let node = &self.nodes[j as usize];
            let verdicts = collect_verdicts(&node.round.submissions, &self.ias);
            let state = consensus_round(round, verdicts, &node.round.proposals, self.cfg.nodes);
            let committed = match &state.decision {
                Decision::Committed(h) => Some(*h),
                Decision::Aborted(_) => None,
            };
            self.nodes[j as usize].round.consensus = Some(state);
            if !self.is_silent(j, round) {
                for peer in 0..self.cfg.nodes {
                    staged.push((
                        ActorId::Node(peer),
                        Message::CommitAnnouncement { round, from_node: j, committed },
                    ));
                }
            }
        }
        self.post(staged);
        self.drain(round)?;

        // All nodes ran the same tally over the same broadcasts; anything
        // else is a bug, not a tolerated fault.
        let decision = self.nodes[0]
            .round
            .consensus
            .as_ref()
            .expect("consensus ran")
            .decision
            .clone();
        for (j, node) in self.nodes.iter().enumerate() {
            let d = &node.round.consensus.as_ref().expect("consensus ran").decision;
            if *d != decision {
                return Err(SimError::Protocol(format!(
                    "node {j} decided {d:?}, node 0 decided {decision:?}"
                )));
            }
            for (&peer, &announced) in &node.round.peer_commits {
                let expected = match &self.nodes[peer as usize].round.consensus {
                    Some(s) => match &s.decision {
                        Decision::Committed(h) => Some(*h),
                        Decision::Aborted(_) => None,
                    },
                    None => None,
                };
                if announced != expected {
                    return Err(SimError::Protocol(format!(
                        "node {peer} announced {announced:?} but decided {expected:?}"
                    )));
                }
            }
        }

        let committed_hash = match &decision {
            Decision::Committed(h) => Some(*h),
            Decision::Aborted(_) => None,
        };
        if committed_hash.is_some() {
            let commit_tick = self.tick;
            for node in &mut self.nodes {
                let state = node.round.consensus.as_ref().expect("consensus ran");
                node.chain
                    .append_committed(state, commit_tick)
                    .map_err(|e| SimError::Internal(e.to_string()))?;
            }

            // Distribution: node 0 ships its chain; edges fetch and verify.
            let dump = self.nodes[0].chain.dump();
            let staged: Vec<(ActorId, Message)> = (0..self.edges.len() as u32)
                .map(|i| {
                    (
                        ActorId::Edge(i),
                        Message::GlobalModelDelivery { round, chain_dump: dump.clone() },
                    )
                })
                .collect();
            self.post(staged);
            self.drain(round)?;
        }

        self.committed.push(committed_hash);
        self.emit_round_metrics(round, aggregation_ticks)?;
        Ok(())
    }

    fn emit_round_metrics(&mut self, round: u64, aggregation_ticks: u64) -> Result<(), SimError> {
        let state = self.nodes[0].round.consensus.as_ref().expect("consensus ran");
        let (decision, committed_hash, abort_reason) = match &state.decision {
            Decision::Committed(h) => ("committed".to_string(), Some(h.to_hex()), None),
            Decision::Aborted(_) => ("aborted".to_string(), None, Some("no-majority".to_string())),
        };
        let tally = state.tally.iter().map(|(h, c)| (h.to_hex(), *c)).collect();
        let absent = (0..self.cfg.nodes).filter(|j| !state.verdicts.contains_key(j)).collect();
        let excluded = state
            .exclusions
            .iter()
            .map(|(node, why)| {
                let why = match why {
                    Exclusion::InvalidVerdict(r) => r.as_str().to_string(),
                    Exclusion::MissingProposal => "missing-proposal".to_string(),
                    Exclusion::ProposalHashMismatch => "proposal-hash-mismatch".to_string(),
                };
                (*node, why)
            })
            .collect();

        let clusters = self
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let (train_loss, train_accuracy) = e.last_train.expect("trained this round");
                ClusterMetrics { cluster: i as u32, train_loss, train_accuracy }
            })
            .collect();
        let global_test_accuracy = accuracy(&self.edges[0].model, &self.spec, &self.test_set)
            .map_err(|e| SimError::Internal(e.to_string()))?;

        self.metrics.push(RoundMetrics {
            schema_version: METRICS_SCHEMA_VERSION,
            round,
            clusters,
            global_test_accuracy,
            aggregation_duration_ticks: aggregation_ticks,
            consensus: ConsensusMetrics {
                decision,
                committed_hash,
                abort_reason,
                tally,
                absent,
                excluded,
            },
            chain_height: self.nodes[0].chain.height(),
            messages: self.counts,
        });
        Ok(())
    }

    /// Post-run ledger edits from the fault plan.
    fn apply_chain_tampering(&mut self) -> Result<(), SimError> {
        for fault in self.cfg.faults.clone() {
            let FaultDirective::TamperChain { node, height, byte } = fault else {
                continue;
            };
            let chain = &mut self.nodes[node as usize].chain;
            let mut dump = chain.dump();
            if !tamper_block_body(&mut dump, height, byte) {
                return Err(SimError::Config(ConfigError::Invalid(format!(
                    "tamper-chain targets height {height}, chain tip is {}",
                    chain.height()
                ))));
            }
            *chain = Chain::load(&dump).map_err(|e| SimError::Internal(e.to_string()))?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<SimOutput, SimError> {
        let final_model = self.edges[0].model.clone();
        let train_datasets = self.edges.iter().map(|e| e.dataset.clone()).collect();
        let chains = self.nodes.iter().map(|n| n.chain.clone()).collect();
        if self.audit.duplicate_processing {
            return Err(SimError::Protocol("an event was processed twice".into()));
        }
        if self.audit.enqueued != self.audit.processed {
            return Err(SimError::Protocol(format!(
                "{} events enqueued but {} processed",
                self.audit.enqueued, self.audit.processed
            )));
        }
        Ok(SimOutput {
            chains,
            metrics: std::mem::take(&mut self.metrics),
            audit: self.audit,
            committed_hashes: self.committed,
            final_model,
            initial_model: self.genesis_model,
            train_datasets,
            test_set: self.test_set,
            corrupted_node_count: self.cfg.corrupted_nodes().len() as u32,
        })
    }
}

/// The corrupt-aggregator wrapper: the honest aggregate, perturbed by +1.0
/// on coordinate 0 and re-attested, so the evidence chain verifies but the
/// hash disagrees with honest nodes.
fn corrupt_outcome(
    spec: &ModelSpec,
    enclave: &Enclave,
    outcome: AggregationOutcome,
    round: u64,
) -> Result<AggregationOutcome, SimError> {
    let mut values = outcome.global_model.values().to_vec();
    values[0] += 1.0;
    let perturbed =
        ParameterVector::new(spec, values).map_err(|e| SimError::Internal(e.to_string()))?;
    let report = enclave.attest(&perturbed, round);
    Ok(AggregationOutcome { global_model: perturbed, report })
}

/// Flips one bit of the `height`-th block's body inside a chain dump.
/// Layout: 16-byte preamble, then per block a u64 length prefix and the
/// block record whose body starts 160 bytes in.
fn tamper_block_body(dump: &mut [u8], height: u64, byte: u64) -> bool {
    let mut pos = 16usize;
    let count = u64::from_le_bytes(dump[8..16].try_into().expect("8 bytes"));
    if height >= count {
        return false;
    }
    for _ in 0..height {
        let len = u64::from_le_bytes(dump[pos..pos + 8].try_into().expect("8 bytes")) as usize;
        pos += 8 + len;
    }
    let len = u64::from_le_bytes(dump[pos..pos + 8].try_into().expect("8 bytes")) as usize;
    let body_len = len - 160;
    let offset = pos + 8 + 160 + (byte as usize % body_len);
    dump[offset] ^= 0x01;
    true
}

/// One sweep measurement row.
#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub devices: u32,
    pub mean_duration_micros: f64,
}

/// Measures mean wall-clock time of the in-enclave aggregation alone, for
/// each device count. Setup (key installation, encryption) happens outside
/// the timed region.
pub fn timing_sweep(
    device_counts: &[u32],
    spec: &ModelSpec,
    seed: u64,
    reps: u32,
) -> Result<Vec<SweepRow>, SimError> {
    if device_counts.is_empty() {
        return Err(SimError::Config(ConfigError::Invalid("no device counts".into())));
    }
    if device_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimError::Config(ConfigError::Invalid(
            "device counts must be strictly ascending".into(),
        )));
    }
    if device_counts[0] == 0 || reps == 0 {
        return Err(SimError::Config(ConfigError::Invalid(
            "device counts and reps must be >= 1".into(),
        )));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let att_key = SigningKeyPair::generate(&mut rng, "sweep-enclave");
    let mut enclave = Enclave::new(0, 1, att_key);
    let model = init_model(spec, seed);
    let bytes = canonical_serialize(&model);

    let max = *device_counts.last().expect("non-empty");
    let mut entries = Vec::with_capacity(max as usize);
    for c in 0..max {
        let mut key_bytes = [0u8; 32];
        rng.fill_bytes(&mut key_bytes);
        let key = SymmetricKey::new(key_bytes, c);
        let ciphertext = encrypt(&bytes, &key, 0);
        enclave.install_cluster_key(c, key);
        entries.push(AggregationEntry { cluster_id: c, ciphertext, dataset_size: 50 + c as u64 });
    }

    let mut rows = Vec::with_capacity(device_counts.len());
    for &count in device_counts {
        let input = AggregationInput { round: 0, entries: entries[..count as usize].to_vec() };
        enclave.aggregate(&input).map_err(|e| SimError::Internal(e.to_string()))?;
        let start = Instant::now();
        for _ in 0..reps {
            enclave.aggregate(&input).map_err(|e| SimError::Internal(e.to_string()))?;
        }
        let mean = start.elapsed().as_secs_f64() * 1e6 / reps as f64;
        rows.push(SweepRow { devices: count, mean_duration_micros: mean });
    }
    Ok(rows)
}

/// Counts trend inversions in a sweep (larger count, smaller time).
pub fn sweep_inversions(rows: &[SweepRow]) -> usize {
    rows.windows(2).filter(|w| w[1].mean_duration_micros < w[0].mean_duration_micros).count()
}
