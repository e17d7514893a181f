//! Quoting and the simulated attestation service.
//!
//! A node's quoting component verifies its enclave's report, counter-signs
//! it into a quote, and encrypts the quote to the attestation service's
//! public key. The service holds the private key plus both key registries
//! and walks the whole evidence chain: quote signature, inner report
//! signature, then the enclave's measurement and security version. Each
//! failing link has its own verdict reason so silence, forgery, and
//! staleness stay distinguishable.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::crypto::{pk_decrypt, pk_encrypt, sign, verify_sig, CryptoError, IasKeyPair, IasPublicKey, SigningKeyPair};
use crate::digest::Hash32;
use crate::enclave::AttestationReport;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QuoteError {
    #[error("enclave on node {node_id} is not registered")]
    UnregisteredEnclave { node_id: u32 },
    #[error("report signature from node {node_id} did not verify")]
    InvalidReportSignature { node_id: u32 },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Why a quote was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictReason {
    /// The encrypted quote could not be decrypted or parsed.
    Undecryptable,
    /// The quote signature did not verify, or the quoting key is unknown.
    BadQuoteSig,
    /// The inner report signature did not verify.
    BadReportSig,
    /// The enclave key is unregistered or the measurement is foreign.
    UnknownEnclave,
    /// The report's security version is below the registry minimum.
    StaleSvn,
}

impl VerdictReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictReason::Undecryptable => "undecryptable",
            VerdictReason::BadQuoteSig => "bad-quote-sig",
            VerdictReason::BadReportSig => "bad-report-sig",
            VerdictReason::UnknownEnclave => "unknown-enclave",
            VerdictReason::StaleSvn => "stale-svn",
        }
    }
}

/// Outcome of verifying one encrypted quote. A valid verdict always carries
/// the model hash bound inside the verified report, never anything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttestationVerdict {
    pub valid: bool,
    pub model_hash: Option<Hash32>,
    pub reason: Option<VerdictReason>,
}

impl AttestationVerdict {
    pub fn valid(model_hash: Hash32) -> Self {
        Self { valid: true, model_hash: Some(model_hash), reason: None }
    }

    pub fn invalid(reason: VerdictReason) -> Self {
        Self { valid: false, model_hash: None, reason: Some(reason) }
    }
}

/// A report counter-signed by a node's quoting key.
///
/// Wire layout: `report length u32 LE | report bytes | quoting_node u32 LE
/// | signature length u32 LE | signature`. The quote signature covers the
/// exact report bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quote {
    pub report: AttestationReport,
    pub quoting_node: u32,
    pub signature: Vec<u8>,
}

impl Quote {
    pub fn to_bytes(&self) -> Vec<u8> {
        let report = self.report.to_bytes();
        let mut out = Vec::with_capacity(4 + report.len() + 4 + 4 + self.signature.len());
        out.extend_from_slice(&(report.len() as u32).to_le_bytes());
        out.extend_from_slice(&report);
        out.extend_from_slice(&self.quoting_node.to_le_bytes());
        out.extend_from_slice(&(self.signature.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < 4 {
            return Err(CryptoError::Format("quote too short"));
        }
        let report_len = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
        let mut pos = 4;
        if bytes.len() < pos + report_len + 8 {
            return Err(CryptoError::Format("quote report section truncated"));
        }
        let report_bytes = &bytes[pos..pos + report_len];
        pos += report_len;
        let quoting_node = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes"));
        pos += 4;
        let sig_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        pos += 4;
        if bytes.len() != pos + sig_len {
            return Err(CryptoError::Format("quote length mismatch"));
        }
        // The report rides inside the quote of the node that hosts the
        // producing enclave, so the quoting node is the report's host.
        let report = AttestationReport::from_bytes(report_bytes, quoting_node)?;
        Ok(Self { report, quoting_node, signature: bytes[pos..].to_vec() })
    }
}

/// A quote sealed to the attestation service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedQuote {
    pub blob: Vec<u8>,
    pub origin_node: u32,
}

/// Expected enclave identity plus the per-node attestation keys.
#[derive(Debug, Clone)]
pub struct EnclaveRegistry {
    pub expected_measurement: Hash32,
    pub min_svn: u32,
    keys: BTreeMap<u32, [u8; 32]>,
}

impl EnclaveRegistry {
    pub fn new(expected_measurement: Hash32, min_svn: u32) -> Self {
        Self { expected_measurement, min_svn, keys: BTreeMap::new() }
    }

    pub fn register(&mut self, node_id: u32, public: [u8; 32]) {
        self.keys.insert(node_id, public);
    }

    pub fn lookup(&self, node_id: u32) -> Option<&[u8; 32]> {
        self.keys.get(&node_id)
    }
}

/// Per-node quoting keys.
#[derive(Debug, Clone, Default)]
pub struct QuotingRegistry {
    keys: BTreeMap<u32, [u8; 32]>,
}

impl QuotingRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, node_id: u32, public: [u8; 32]) {
        self.keys.insert(node_id, public);
    }

    pub fn lookup(&self, node_id: u32) -> Option<&[u8; 32]> {
        self.keys.get(&node_id)
    }
}

/// Verifies the report against the registry and counter-signs it. A quote
/// is only ever emitted for a report whose signature already verified.
pub fn generate_quote(
    report: &AttestationReport,
    quoting_key: &SigningKeyPair,
    quoting_node: u32,
    registry: &EnclaveRegistry,
) -> Result<Quote, QuoteError> {
    let node_id = report.enclave.node_id;
    let public = registry
        .lookup(node_id)
        .ok_or(QuoteError::UnregisteredEnclave { node_id })?;
    if !report.verify(public)? {
        return Err(QuoteError::InvalidReportSignature { node_id });
    }
    let signature = sign(&report.to_bytes(), quoting_key).to_vec();
    Ok(Quote { report: report.clone(), quoting_node, signature })
}

/// Seals a quote to the service's public key.
pub fn encrypt_quote<R: RngCore + CryptoRng>(
    quote: &Quote,
    service_public: &IasPublicKey,
    rng: &mut R,
) -> EncryptedQuote {
    EncryptedQuote {
        blob: pk_encrypt(&quote.to_bytes(), service_public, rng),
        origin_node: quote.quoting_node,
    }
}

/// The simulated attestation service: private key plus both registries,
/// read-only after setup and consulted synchronously by every node.
pub struct IasService {
    keypair: IasKeyPair,
    enclave_registry: EnclaveRegistry,
    quoting_registry: QuotingRegistry,
}

impl IasService {
    pub fn new(keypair: IasKeyPair, enclave_registry: EnclaveRegistry, quoting_registry: QuotingRegistry) -> Self {
        Self { keypair, enclave_registry, quoting_registry }
    }

    pub fn public_key(&self) -> IasPublicKey {
        self.keypair.public()
    }

    pub fn enclave_registry(&self) -> &EnclaveRegistry {
        &self.enclave_registry
    }

    /// Walks the evidence chain of one encrypted quote. Every link must
    /// verify for a valid verdict, and the returned hash is exactly the one
    /// inside the verified report.
    pub fn verify(&self, eq: &EncryptedQuote) -> AttestationVerdict {
        let plain = match pk_decrypt(&eq.blob, &self.keypair) {
            Ok(p) => p,
            Err(_) => return AttestationVerdict::invalid(VerdictReason::Undecryptable),
        };
        let quote = match Quote::from_bytes(&plain) {
            Ok(q) => q,
            Err(_) => return AttestationVerdict::invalid(VerdictReason::Undecryptable),
        };

        let quote_key = match self.quoting_registry.lookup(quote.quoting_node) {
            Some(k) => k,
            None => return AttestationVerdict::invalid(VerdictReason::BadQuoteSig),
        };
        match verify_sig(&quote.report.to_bytes(), &quote.signature, quote_key) {
            Ok(true) => {}
            _ => return AttestationVerdict::invalid(VerdictReason::BadQuoteSig),
        }

        let report = &quote.report;
        let enclave_key = match self.enclave_registry.lookup(report.enclave.node_id) {
            Some(k) => k,
            None => return AttestationVerdict::invalid(VerdictReason::UnknownEnclave),
        };
        match report.verify(enclave_key) {
            Ok(true) => {}
            _ => return AttestationVerdict::invalid(VerdictReason::BadReportSig),
        }

        if report.enclave.measurement != self.enclave_registry.expected_measurement {
            return AttestationVerdict::invalid(VerdictReason::UnknownEnclave);
        }
        if report.enclave.svn < self.enclave_registry.min_svn {
            return AttestationVerdict::invalid(VerdictReason::StaleSvn);
        }

        AttestationVerdict::valid(report.model_hash)
    }
}

/// Verifies every submitted quote for one round, keyed by submitting node.
/// Nodes that submitted nothing are simply absent from the result; silence
/// and byzantine behavior must not be conflated.
pub fn collect_verdicts(
    submissions: &BTreeMap<u32, EncryptedQuote>,
    ias: &IasService,
) -> BTreeMap<u32, AttestationVerdict> {
    submissions.iter().map(|(&node, eq)| (node, ias.verify(eq))).collect()
}
