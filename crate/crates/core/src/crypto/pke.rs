//! Hybrid public-key encryption to the attestation service: a fresh X25519
//! ephemeral key agrees with the service's static key, HKDF-SHA256 derives
//! a one-shot AES-256-GCM key, and the ephemeral public value travels in
//! front of the sealed payload.
//!
//! Blob layout: `ephemeral public (32 bytes) | GCM body | GCM tag (16)`.

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes256Gcm, Key, KeyInit, Nonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use x25519_dalek::{EphemeralSecret, PublicKey, StaticSecret};

use super::{CryptoError, KEY_LEN, NONCE_LEN, TAG_LEN};

const PKE_INFO: &[u8] = b"fedchain/v1/quote-encryption";

/// The attestation service's public key, embedded in every quoting
/// component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IasPublicKey(pub [u8; 32]);

/// The attestation service's keypair. Generated once per simulation; the
/// private half never leaves the service.
pub struct IasKeyPair {
    secret: StaticSecret,
    public: IasPublicKey,
}

impl IasKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let secret = StaticSecret::random_from_rng(rng);
        let public = IasPublicKey(PublicKey::from(&secret).to_bytes());
        Self { secret, public }
    }

    pub fn public(&self) -> IasPublicKey {
        self.public
    }
}

impl std::fmt::Debug for IasKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "IasKeyPair(public={:02x?}..)", &self.public.0[..4])
    }
}

fn derive_key(shared: &[u8; 32], ephemeral_public: &[u8; 32], recipient: &[u8; 32]) -> [u8; KEY_LEN] {
    let mut salt = Vec::with_capacity(64);
    salt.extend_from_slice(ephemeral_public);
    salt.extend_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut key = [0u8; KEY_LEN];
    hk.expand(PKE_INFO, &mut key).expect("valid HKDF output length");
    key
}

/// Encrypts to the service's public key. Randomized: two encryptions of the
/// same payload differ because the ephemeral key is fresh each time.
pub fn pk_encrypt<R: RngCore + CryptoRng>(
    payload: &[u8],
    recipient: &IasPublicKey,
    rng: &mut R,
) -> Vec<u8> {
    let ephemeral = EphemeralSecret::random_from_rng(rng);
    let ephemeral_public = PublicKey::from(&ephemeral).to_bytes();
    let shared = ephemeral.diffie_hellman(&PublicKey::from(recipient.0));
    let key = derive_key(shared.as_bytes(), &ephemeral_public, &recipient.0);

    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&key));
    // The derived key is single-use, so a fixed all-zero nonce is safe.
    let nonce = [0u8; NONCE_LEN];
    let sealed = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: payload, aad: &ephemeral_public })
        .expect("AES-GCM encryption is infallible for in-memory buffers");

    let mut blob = Vec::with_capacity(32 + sealed.len());
    blob.extend_from_slice(&ephemeral_public);
    blob.extend_from_slice(&sealed);
    blob
}

/// Decrypts a blob with the service's private key. Truncation or any bit
/// flip fails cleanly with no partial plaintext.
pub fn pk_decrypt(blob: &[u8], kp: &IasKeyPair) -> Result<Vec<u8>, CryptoError> {
    if blob.len() < 32 + TAG_LEN {
        return Err(CryptoError::DecryptionFailure("blob too short"));
    }
    let ephemeral_public: [u8; 32] = blob[..32].try_into().expect("32 bytes");
    let shared = kp.secret.diffie_hellman(&PublicKey::from(ephemeral_public));
    let key = derive_key(shared.as_bytes(), &ephemeral_public, &kp.public.0);

    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&key));
    let nonce = [0u8; NONCE_LEN];
    cipher
        .decrypt(Nonce::from_slice(&nonce), Payload { msg: &blob[32..], aad: &ephemeral_public })
        .map_err(|_| CryptoError::DecryptionFailure("authentication failed"))
}
