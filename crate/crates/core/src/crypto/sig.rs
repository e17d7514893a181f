//! Ed25519 signatures for attestation reports and quotes. Ed25519 signing
//! is deterministic, which keeps signed artifacts byte-stable across
//! repeated runs with the same keys.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::{CryptoRng, RngCore};

use super::CryptoError;

pub const SIGNATURE_LEN: usize = 64;
pub const VERIFYING_KEY_LEN: usize = 32;

pub type SignatureBytes = [u8; SIGNATURE_LEN];

/// A signing key with its derived verification key and an owner label.
pub struct SigningKeyPair {
    secret: SigningKey,
    public: VerifyingKey,
    owner: String,
}

impl SigningKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R, owner: &str) -> Self {
        assert!(!owner.is_empty(), "key owner label must be non-empty");
        let secret = SigningKey::generate(rng);
        let public = secret.verifying_key();
        Self { secret, public, owner: owner.to_string() }
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn public_bytes(&self) -> [u8; VERIFYING_KEY_LEN] {
        self.public.to_bytes()
    }
}

impl std::fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigningKeyPair(owner={})", self.owner)
    }
}

/// Signs a message; the same key and message always produce the same bytes.
pub fn sign(message: &[u8], kp: &SigningKeyPair) -> SignatureBytes {
    kp.secret.sign(message).to_bytes()
}

/// Verifies a signature encoding against a verification-key encoding.
/// Malformed encodings are format errors, distinct from a clean `false`.
pub fn verify_sig(message: &[u8], sig: &[u8], public: &[u8]) -> Result<bool, CryptoError> {
    let sig_arr: [u8; SIGNATURE_LEN] =
        sig.try_into().map_err(|_| CryptoError::Format("signature must be 64 bytes"))?;
    let key_arr: [u8; VERIFYING_KEY_LEN] =
        public.try_into().map_err(|_| CryptoError::Format("verifying key must be 32 bytes"))?;
    let key = VerifyingKey::from_bytes(&key_arr)
        .map_err(|_| CryptoError::Format("invalid verifying key encoding"))?;
    let signature = Signature::from_bytes(&sig_arr);
    Ok(key.verify(message, &signature).is_ok())
}
