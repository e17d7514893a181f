//! AES-256-GCM envelopes with counter-derived nonces.
//!
//! Wire layout (external interface, little-endian):
//!
//! ```text
//! key_id u32 | nonce (12 bytes) | body length u64 | body | tag (16 bytes)
//! ```
//!
//! The key id is bound as associated data, so flipping any wire bit,
//! including the id itself, fails authentication.

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes256Gcm, Key, KeyInit, Nonce};

use super::CryptoError;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

/// A 256-bit symmetric key. The id is unique per (cluster, enclave) pair
/// and routes ciphertexts to the right key.
#[derive(Clone)]
pub struct SymmetricKey {
    bytes: [u8; KEY_LEN],
    key_id: u32,
}

impl SymmetricKey {
    pub fn new(bytes: [u8; KEY_LEN], key_id: u32) -> Self {
        Self { bytes, key_id }
    }

    pub fn key_id(&self) -> u32 {
        self.key_id
    }

    pub(crate) fn bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }
}

impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SymmetricKey(id={})", self.key_id)
    }
}

/// An authenticated ciphertext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    pub key_id: u32,
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + NONCE_LEN + 8 + self.body.len() + TAG_LEN);
        out.extend_from_slice(&self.key_id.to_le_bytes());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.body.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.body);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let fixed = 4 + NONCE_LEN + 8;
        if bytes.len() < fixed + TAG_LEN {
            return Err(CryptoError::Format("ciphertext too short"));
        }
        let key_id = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes"));
        let nonce: [u8; NONCE_LEN] = bytes[4..4 + NONCE_LEN].try_into().expect("12 bytes");
        let body_len =
            u64::from_le_bytes(bytes[4 + NONCE_LEN..fixed].try_into().expect("8 bytes")) as usize;
        if bytes.len() != fixed + body_len + TAG_LEN {
            return Err(CryptoError::Format("ciphertext length mismatch"));
        }
        let body = bytes[fixed..fixed + body_len].to_vec();
        let tag: [u8; TAG_LEN] = bytes[fixed + body_len..].try_into().expect("16 bytes");
        Ok(Self { key_id, nonce, body, tag })
    }
}

/// Derives the 96-bit nonce for message `seq` under a key: the counter in
/// little-endian followed by four zero bytes. Sequence numbers must not be
/// reused under one key; [`SealingSession`] owns that counter.
fn nonce_for_seq(seq: u64) -> [u8; NONCE_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    nonce[..8].copy_from_slice(&seq.to_le_bytes());
    nonce
}

/// Encrypts `payload` under `key` with the nonce derived from `seq`.
pub fn encrypt(payload: &[u8], key: &SymmetricKey, seq: u64) -> Ciphertext {
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(key.bytes()));
    let nonce = nonce_for_seq(seq);
    let mut sealed = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            Payload { msg: payload, aad: &key.key_id().to_le_bytes() },
        )
        .expect("AES-GCM encryption is infallible for in-memory buffers");
    let tag_start = sealed.len() - TAG_LEN;
    let tag: [u8; TAG_LEN] = sealed[tag_start..].try_into().expect("16 bytes");
    sealed.truncate(tag_start);
    Ciphertext { key_id: key.key_id(), nonce, body: sealed, tag }
}

/// Authenticates and decrypts. Fails closed: any modified bit anywhere in
/// the envelope yields `AuthenticationFailure` and no plaintext.
pub fn decrypt(ct: &Ciphertext, key: &SymmetricKey) -> Result<Vec<u8>, CryptoError> {
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(key.bytes()));
    let mut sealed = Vec::with_capacity(ct.body.len() + TAG_LEN);
    sealed.extend_from_slice(&ct.body);
    sealed.extend_from_slice(&ct.tag);
    cipher
        .decrypt(
            Nonce::from_slice(&ct.nonce),
            Payload { msg: &sealed, aad: &ct.key_id.to_le_bytes() },
        )
        .map_err(|_| CryptoError::AuthenticationFailure)
}

/// A key plus the monotone nonce counter. The session must be the only
/// encryptor under its key; decryption is stateless.
#[derive(Debug, Clone)]
pub struct SealingSession {
    key: SymmetricKey,
    next_seq: u64,
}

impl SealingSession {
    pub fn new(key: SymmetricKey) -> Self {
        Self { key, next_seq: 0 }
    }

    pub fn key(&self) -> &SymmetricKey {
        &self.key
    }

    pub fn encrypt_next(&mut self, payload: &[u8]) -> Ciphertext {
        let ct = encrypt(payload, &self.key, self.next_seq);
        self.next_seq += 1;
        ct
    }
}
