//! Ephemeral X25519 session-key establishment between an edge server and an
//! enclave. Both parties exchange ephemeral public values over the network;
//! each then derives the same 32-byte key from its own secret, the peer's
//! public value, and the full transcript. Nothing here authenticates the
//! peers: a mismatched transcript simply yields different keys and the
//! first authenticated decryption fails.

use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use x25519_dalek::{EphemeralSecret, PublicKey};

use super::{CryptoError, SymmetricKey, KEY_LEN};
use crate::digest::sha256;

const SESSION_KEY_INFO: &[u8] = b"fedchain/v1/session-key";

/// One party's ephemeral key for a single exchange. Consumed on derivation;
/// a fresh value is required per session.
pub struct EphemeralDh {
    secret: EphemeralSecret,
    public: PublicKey,
}

impl EphemeralDh {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let secret = EphemeralSecret::random_from_rng(rng);
        let public = PublicKey::from(&secret);
        Self { secret, public }
    }

    pub fn public_bytes(&self) -> [u8; 32] {
        self.public.to_bytes()
    }
}

/// What both parties saw on the wire: who is talking to whom, a session
/// counter, and the two ephemeral public values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionTranscript {
    pub initiator_id: u32,
    pub responder_id: u32,
    pub session: u64,
    pub initiator_public: [u8; 32],
    pub responder_public: [u8; 32],
}

impl SessionTranscript {
    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 + 8 + 32 + 32);
        out.extend_from_slice(&self.initiator_id.to_le_bytes());
        out.extend_from_slice(&self.responder_id.to_le_bytes());
        out.extend_from_slice(&self.session.to_le_bytes());
        out.extend_from_slice(&self.initiator_public);
        out.extend_from_slice(&self.responder_public);
        out
    }
}

/// Derives the session key from one party's ephemeral secret and the
/// transcript. Fails if the party's own public value does not appear in the
/// transcript or if the shared secret is non-contributory.
pub fn derive_session_key(
    own: EphemeralDh,
    transcript: &SessionTranscript,
    key_id: u32,
) -> Result<SymmetricKey, CryptoError> {
    let own_public = own.public_bytes();
    let peer_public = if own_public == transcript.initiator_public {
        transcript.responder_public
    } else if own_public == transcript.responder_public {
        transcript.initiator_public
    } else {
        return Err(CryptoError::KeyAgreementFailure(
            "own ephemeral public value is not in the transcript",
        ));
    };

    let shared = own.secret.diffie_hellman(&PublicKey::from(peer_public));
    if !shared.was_contributory() {
        return Err(CryptoError::KeyAgreementFailure("non-contributory shared secret"));
    }

    let salt = sha256(&transcript.encode());
    let hk = Hkdf::<Sha256>::new(Some(salt.as_bytes()), shared.as_bytes());
    let mut key = [0u8; KEY_LEN];
    hk.expand(SESSION_KEY_INFO, &mut key)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    Ok(SymmetricKey::new(key, key_id))
}
