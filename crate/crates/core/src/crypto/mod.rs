//! Cryptographic primitives consumed by the aggregation and attestation
//! protocol: authenticated symmetric encryption for local-model transport,
//! deterministic signatures for reports and quotes, session-key agreement
//! between edge servers and enclaves, and public-key encryption of quotes
//! to the attestation service.
//!
//! Primitive choices are fixed so that every participant hashes and signs
//! identical bytes: AES-256-GCM, Ed25519, X25519 + HKDF-SHA256.

mod aead;
mod kex;
mod pke;
mod sig;

pub use aead::{decrypt, encrypt, Ciphertext, SealingSession, SymmetricKey, KEY_LEN, NONCE_LEN, TAG_LEN};
pub use kex::{derive_session_key, EphemeralDh, SessionTranscript};
pub use pke::{pk_decrypt, pk_encrypt, IasKeyPair, IasPublicKey};
pub use sig::{sign, verify_sig, SignatureBytes, SigningKeyPair, SIGNATURE_LEN, VERIFYING_KEY_LEN};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    /// The authenticator did not verify; no plaintext is released.
    #[error("authentication failure")]
    AuthenticationFailure,
    #[error("key agreement failed: {0}")]
    KeyAgreementFailure(&'static str),
    #[error("public-key decryption failed: {0}")]
    DecryptionFailure(&'static str),
    #[error("malformed encoding: {0}")]
    Format(&'static str),
}
