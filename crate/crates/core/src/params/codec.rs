//! Canonical model byte format. Consensus compares hashes of these bytes
//! across nodes, so the layout is normative and versioned:
//!
//! ```text
//! magic "FCTM" | version u32 LE | spec digest (32 bytes)
//! | value count u64 LE | each value as IEEE-754 f64 LE, vector order
//! ```
//!
//! The encoding is bijective with the in-memory model: decode(encode(m))
//! reproduces `m` exactly, and no two distinct models share an encoding.

use thiserror::Error;

use super::ParameterVector;
use crate::digest::{sha256, Hash32};

pub const MODEL_MAGIC: [u8; 4] = *b"FCTM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 32 + 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic at byte 0")]
    BadMagic,
    #[error("unsupported format version {0} at byte 4")]
    BadVersion(u32),
    #[error("zero-length value section at byte 40")]
    EmptyValues,
    #[error("truncated input: need {need} bytes, have {have} (at byte {offset})")]
    Truncated { offset: usize, need: usize, have: usize },
    #[error("{extra} trailing bytes after value section (at byte {offset})")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("non-finite value at byte {offset}")]
    NonFinite { offset: usize },
}

/// Encodes a model into the canonical byte layout.
pub fn canonical_serialize(model: &ParameterVector) -> Vec<u8> {
    let values = model.values();
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 8);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(model.spec_digest().as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes canonical model bytes, rejecting anything malformed: wrong magic
/// or version, zero value count, truncation, trailing bytes, or non-finite
/// values.
pub fn canonical_deserialize(bytes: &[u8]) -> Result<ParameterVector, CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated { offset: bytes.len(), need: HEADER_LEN, have: bytes.len() });
    }
    if bytes[0..4] != MODEL_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != MODEL_FORMAT_VERSION {
        return Err(CodecError::BadVersion(version));
    }
    let spec_digest =
        Hash32::from_slice(&bytes[8..40]).expect("32 bytes");
    let count = u64::from_le_bytes(bytes[40..48].try_into().expect("8 bytes")) as usize;
    if count == 0 {
        return Err(CodecError::EmptyValues);
    }
    let need = HEADER_LEN + count * 8;
    if bytes.len() < need {
        return Err(CodecError::Truncated { offset: bytes.len(), need, have: bytes.len() });
    }
    if bytes.len() > need {
        return Err(CodecError::TrailingBytes { offset: need, extra: bytes.len() - need });
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let offset = HEADER_LEN + i * 8;
        let v = f64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(CodecError::NonFinite { offset });
        }
        values.push(v);
    }
    ParameterVector::from_parts(spec_digest, values).map_err(|_| CodecError::EmptyValues)
}

/// SHA-256 of the canonical encoding. This is the value consensus tallies
/// and blocks carry.
pub fn model_hash(model: &ParameterVector) -> Hash32 {
    sha256(&canonical_serialize(model))
}

/// Measures how many leading bytes of `bytes` form one canonical model
/// encoding, without copying values. Used to split a block body into its
/// model part and trailing sections.
pub fn canonical_encoded_len(bytes: &[u8]) -> Result<usize, CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Truncated { offset: bytes.len(), need: HEADER_LEN, have: bytes.len() });
    }
    if bytes[0..4] != MODEL_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let count = u64::from_le_bytes(bytes[40..48].try_into().expect("8 bytes")) as usize;
    if count == 0 {
        return Err(CodecError::EmptyValues);
    }
    let need = HEADER_LEN + count * 8;
    if bytes.len() < need {
        return Err(CodecError::Truncated { offset: bytes.len(), need, have: bytes.len() });
    }
    Ok(need)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{init_model, ModelSpec};

    fn sample_model() -> ParameterVector {
        init_model(&ModelSpec::mlp(vec![3, 4, 2]).unwrap(), 5)
    }

    #[test]
    fn round_trip_is_identity() {
        let m = sample_model();
        let bytes = canonical_serialize(&m);
        let back = canonical_deserialize(&bytes).unwrap();
        assert_eq!(back.spec_digest(), m.spec_digest());
        let got: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = m.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn one_mantissa_bit_changes_the_stream() {
        let m = sample_model();
        let mut tweaked = m.values().to_vec();
        tweaked[0] = f64::from_bits(tweaked[0].to_bits() ^ 1);
        let m2 = ParameterVector::new(&ModelSpec::mlp(vec![3, 4, 2]).unwrap(), tweaked).unwrap();
        assert_ne!(canonical_serialize(&m), canonical_serialize(&m2));
        assert_ne!(model_hash(&m), model_hash(&m2));
    }

    #[test]
    fn zero_count_is_rejected() {
        let m = sample_model();
        let mut bytes = canonical_serialize(&m);
        bytes.truncate(HEADER_LEN);
        bytes[40..48].copy_from_slice(&0u64.to_le_bytes());
        assert_eq!(canonical_deserialize(&bytes), Err(CodecError::EmptyValues));
    }

    #[test]
    fn bad_magic_version_truncation_and_trailing_are_rejected() {
        let m = sample_model();
        let good = canonical_serialize(&m);

        let mut bad_magic = good.clone();
        bad_magic[0] ^= 0xff;
        assert_eq!(canonical_deserialize(&bad_magic), Err(CodecError::BadMagic));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert_eq!(canonical_deserialize(&bad_version), Err(CodecError::BadVersion(9)));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(canonical_deserialize(truncated), Err(CodecError::Truncated { .. })));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(canonical_deserialize(&trailing), Err(CodecError::TrailingBytes { .. })));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let m = sample_model();
        let mut bytes = canonical_serialize(&m);
        bytes[HEADER_LEN..HEADER_LEN + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(canonical_deserialize(&bytes), Err(CodecError::NonFinite { offset }) if offset == HEADER_LEN));
    }

    #[test]
    fn hash_is_pure_function_of_bytes() {
        let m = sample_model();
        assert_eq!(model_hash(&m), model_hash(&m));
        assert_eq!(model_hash(&m), crate::digest::sha256(&canonical_serialize(&m)));
        assert_eq!(model_hash(&m).as_bytes().len(), 32);
    }

    #[test]
    fn encoded_len_splits_concatenations() {
        let m = sample_model();
        let mut bytes = canonical_serialize(&m);
        let len = bytes.len();
        bytes.extend_from_slice(b"suffix");
        assert_eq!(canonical_encoded_len(&bytes).unwrap(), len);
        assert!(canonical_deserialize(&bytes[..len]).is_ok());
    }
}
