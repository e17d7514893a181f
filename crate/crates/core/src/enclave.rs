//! Simulated sealed-execution boundary hosted by each blockchain node.
//!
//! The enclave decrypts the encrypted local models it was handed, averages
//! them weighted by dataset size, and emits the aggregated model together
//! with a signed report binding the model hash to the enclave's identity.
//! Local-model plaintext exists only inside [`Enclave::aggregate`]; it is
//! never logged, returned, or embedded in errors.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::crypto::{decrypt, sign, verify_sig, Ciphertext, CryptoError, SigningKeyPair, SymmetricKey};
use crate::digest::{sha256, Hash32};
use crate::params::{canonical_deserialize, model_hash, ParameterVector, ParamsError};

/// Version string standing in for the enclave binary; its digest is the
/// measurement every honest enclave reports.
pub const ENCLAVE_CODE_VERSION: &str = "fedchain-enclave/1";

/// Digest of the logical enclave code identity.
pub fn enclave_measurement() -> Hash32 {
    sha256(ENCLAVE_CODE_VERSION.as_bytes())
}

#[derive(Debug, Error)]
pub enum EnclaveError {
    #[error("invalid aggregation input: {0}")]
    InvalidInput(String),
    #[error("no key registered for cluster {cluster_id}")]
    UnknownCluster { cluster_id: u32 },
    /// Aggregation aborts on the first undecryptable entry; a partial
    /// average would silently change the weight denominator.
    #[error("cluster {cluster_id}: local model failed authentication")]
    DecryptionFailed { cluster_id: u32, #[source] source: CryptoError },
    #[error("cluster {cluster_id}: local model bytes are malformed")]
    MalformedModel { cluster_id: u32 },
    #[error("cluster {cluster_id}: model spec differs from the rest of the round")]
    SpecMismatch { cluster_id: u32 },
    #[error("model shapes disagree: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// Who computed an aggregate: code measurement, security version, and the
/// hosting node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnclaveIdentity {
    pub measurement: Hash32,
    pub svn: u32,
    pub node_id: u32,
}

/// One cluster's contribution: its ciphertext and its dataset size.
#[derive(Debug, Clone)]
pub struct AggregationEntry {
    pub cluster_id: u32,
    pub ciphertext: Ciphertext,
    pub dataset_size: u64,
}

/// The encrypted local models handed to an enclave for one round.
/// Entries must be non-empty, strictly ascending by cluster id, and carry
/// positive dataset sizes; ordering is normative because float accumulation
/// order decides the aggregate's bits.
#[derive(Debug, Clone)]
pub struct AggregationInput {
    pub round: u64,
    pub entries: Vec<AggregationEntry>,
}

impl AggregationInput {
    pub fn validate(&self) -> Result<(), EnclaveError> {
        if self.entries.is_empty() {
            return Err(EnclaveError::InvalidInput("no entries".into()));
        }
        for pair in self.entries.windows(2) {
            if pair[0].cluster_id >= pair[1].cluster_id {
                return Err(EnclaveError::InvalidInput(format!(
                    "cluster ids must be strictly ascending, saw {} then {}",
                    pair[0].cluster_id, pair[1].cluster_id
                )));
            }
        }
        if let Some(e) = self.entries.iter().find(|e| e.dataset_size == 0) {
            return Err(EnclaveError::InvalidInput(format!(
                "cluster {} reports a zero dataset size",
                e.cluster_id
            )));
        }
        Ok(())
    }
}

/// Signed statement binding an aggregated model's hash to the enclave that
/// produced it.
///
/// Wire layout: `round u64 LE | model_hash (32) | measurement (32)
/// | svn u32 LE | signature (u32 LE length prefix)`. The hosting node id is
/// carried by the surrounding quote, not by the report itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationReport {
    pub round: u64,
    pub model_hash: Hash32,
    pub enclave: EnclaveIdentity,
    pub signature: Vec<u8>,
}

impl AttestationReport {
    /// The bytes the attestation key signs.
    pub fn signing_payload(round: u64, model_hash: &Hash32, measurement: &Hash32, svn: u32) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 32 + 32 + 4);
        out.extend_from_slice(&round.to_le_bytes());
        out.extend_from_slice(model_hash.as_bytes());
        out.extend_from_slice(measurement.as_bytes());
        out.extend_from_slice(&svn.to_le_bytes());
        out
    }

    pub fn payload(&self) -> Vec<u8> {
        Self::signing_payload(self.round, &self.model_hash, &self.enclave.measurement, self.enclave.svn)
    }

    /// True when `public` signed this report's payload.
    pub fn verify(&self, public: &[u8]) -> Result<bool, CryptoError> {
        verify_sig(&self.payload(), &self.signature, public)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.payload();
        out.extend_from_slice(&(self.signature.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.signature);
        out
    }

    /// Parses report bytes. The node id is context from the carrier.
    pub fn from_bytes(bytes: &[u8], node_id: u32) -> Result<Self, CryptoError> {
        const FIXED: usize = 8 + 32 + 32 + 4;
        if bytes.len() < FIXED + 4 {
            return Err(CryptoError::Format("report too short"));
        }
        let round = u64::from_le_bytes(bytes[0..8].try_into().expect("8 bytes"));
        let model_hash = Hash32::from_slice(&bytes[8..40]).expect("32 bytes");
        let measurement = Hash32::from_slice(&bytes[40..72]).expect("32 bytes");
        let svn = u32::from_le_bytes(bytes[72..76].try_into().expect("4 bytes"));
        let sig_len =
            u32::from_le_bytes(bytes[76..80].try_into().expect("4 bytes")) as usize;
        if bytes.len() != FIXED + 4 + sig_len {
            return Err(CryptoError::Format("report length mismatch"));
        }
        Ok(Self {
            round,
            model_hash,
            enclave: EnclaveIdentity { measurement, svn, node_id },
            signature: bytes[80..].to_vec(),
        })
    }
}

/// The aggregated model and the report vouching for it.
#[derive(Debug)]
pub struct AggregationOutcome {
    pub global_model: ParameterVector,
    pub report: AttestationReport,
}

/// Size-weighted model average: `out[k] = sum_i (sizes[i]/N) * models[i][k]`,
/// accumulated in index order `i = 0..p-1` in double precision. The order is
/// normative; reassociating the sum would change output bits and break hash
/// agreement between honest nodes.
pub fn fedavg(models: &[ParameterVector], sizes: &[u64]) -> Result<ParameterVector, EnclaveError> {
    if models.is_empty() {
        return Err(EnclaveError::ShapeMismatch("no models".into()));
    }
    if models.len() != sizes.len() {
        return Err(EnclaveError::ShapeMismatch(format!(
            "{} models but {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(EnclaveError::ShapeMismatch("zero dataset size".into()));
    }
    let digest = models[0].spec_digest();
    let len = models[0].len();
    for (i, m) in models.iter().enumerate() {
        if m.spec_digest() != digest {
            return Err(EnclaveError::ShapeMismatch(format!("model {i} has a different spec")));
        }
        if m.len() != len {
            return Err(EnclaveError::ShapeMismatch(format!(
                "model {i} has {} values, expected {len}",
                m.len()
            )));
        }
    }

    let total: u64 = sizes.iter().sum();
    let total_f = total as f64;
    let mut out = vec![0.0f64; len];
    for (model, &size) in models.iter().zip(sizes) {
        let weight = size as f64 / total_f;
        for (acc, v) in out.iter_mut().zip(model.values()) {
            *acc += weight * v;
        }
    }
    Ok(ParameterVector::from_parts(digest, out)?)
}

/// Signs a report for `model` under the enclave's attestation key.
pub fn make_report(
    model: &ParameterVector,
    round: u64,
    identity: &EnclaveIdentity,
    att_key: &SigningKeyPair,
) -> AttestationReport {
    let hash = model_hash(model);
    let payload = AttestationReport::signing_payload(round, &hash, &identity.measurement, identity.svn);
    AttestationReport {
        round,
        model_hash: hash,
        enclave: *identity,
        signature: sign(&payload, att_key).to_vec(),
    }
}

/// Decrypts every entry, averages, and signs. See [`Enclave::aggregate`].
pub fn enclave_aggregate(
    input: &AggregationInput,
    keys: &BTreeMap<u32, SymmetricKey>,
    att_key: &SigningKeyPair,
    identity: &EnclaveIdentity,
) -> Result<AggregationOutcome, EnclaveError> {
    input.validate()?;

    let mut models = Vec::with_capacity(input.entries.len());
    let mut sizes = Vec::with_capacity(input.entries.len());
    for entry in &input.entries {
        let key = keys
            .get(&entry.cluster_id)
            .ok_or(EnclaveError::UnknownCluster { cluster_id: entry.cluster_id })?;
        let plain = decrypt(&entry.ciphertext, key)
            .map_err(|source| EnclaveError::DecryptionFailed { cluster_id: entry.cluster_id, source })?;
        let model = canonical_deserialize(&plain)
            .map_err(|_| EnclaveError::MalformedModel { cluster_id: entry.cluster_id })?;
        models.push(model);
        sizes.push(entry.dataset_size);
    }

    let digest = models[0].spec_digest();
    if let Some(pos) = models.iter().position(|m| m.spec_digest() != digest) {
        return Err(EnclaveError::SpecMismatch { cluster_id: input.entries[pos].cluster_id });
    }

    let global_model = fedavg(&models, &sizes)?;
    let report = make_report(&global_model, input.round, identity, att_key);
    Ok(AggregationOutcome { global_model, report })
}

/// A single enclave instance: its identity, its attestation key, and the
/// per-cluster transport keys sealed inside it. Owned by exactly one node.
pub struct Enclave {
    identity: EnclaveIdentity,
    att_key: SigningKeyPair,
    cluster_keys: BTreeMap<u32, SymmetricKey>,
}

impl Enclave {
    pub fn new(node_id: u32, svn: u32, att_key: SigningKeyPair) -> Self {
        assert!(svn >= 1, "security version starts at 1");
        Self {
            identity: EnclaveIdentity { measurement: enclave_measurement(), svn, node_id },
            att_key,
            cluster_keys: BTreeMap::new(),
        }
    }

    pub fn identity(&self) -> &EnclaveIdentity {
        &self.identity
    }

    pub fn attestation_public(&self) -> [u8; 32] {
        self.att_key.public_bytes()
    }

    /// Installs the transport key shared with one cluster's edge server.
    pub fn install_cluster_key(&mut self, cluster_id: u32, key: SymmetricKey) {
        self.cluster_keys.insert(cluster_id, key);
    }

    pub fn aggregate(&self, input: &AggregationInput) -> Result<AggregationOutcome, EnclaveError> {
        enclave_aggregate(input, &self.cluster_keys, &self.att_key, &self.identity)
    }

    /// Signs a report binding `model`'s hash to this enclave for `round`.
    pub fn attest(&self, model: &ParameterVector, round: u64) -> AttestationReport {
        make_report(model, round, &self.identity, &self.att_key)
    }
}

impl std::fmt::Debug for Enclave {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Enclave(node={}, svn={})", self.identity.node_id, self.identity.svn)
    }
}
