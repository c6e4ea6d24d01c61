//! Additively homomorphic encryption for synergy aggregation.
//!
//! Classic Paillier with `g = n + 1`, a fixed-point codec that maps real
//! weights into signed residues of `Z_n`, slot packing so that one
//! ciphertext carries several weights, randomness-recovery proofs of
//! correct decryption, and Ed25519 message signatures.

mod codec;
mod packed;
mod paillier;
mod proof;
mod selftest;
mod sign;

pub use codec::{decode_weights, encode_weights, from_residue, to_residue, FixedPointCodec};
pub use packed::{
    ciphertext_count, decrypt_packed, encrypt_packed, encrypt_packed_with_layout, homomorphic_add,
    CodecDescriptor, PackedCiphertext,
};
pub use paillier::{keygen, KeyPair, KeygenMode, PublicKey, SecretKey, MIN_MODULUS_BITS};
pub use proof::{prove_decryption, verify_decryption, DecryptionProof};
pub use selftest::self_test;
pub use sign::{
    generate_signing_key, sign_message, verify_signature, Signature, SigningKey, VerifyingKey,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeError {
    #[error("modulus too small: {bits} bits (minimum {MIN_MODULUS_BITS})")]
    ModulusTooSmall { bits: u64 },
    #[error("unsupported modulus size {bits}; production keys are 2048 or 3072 bits")]
    UnsupportedModulus { bits: u64 },
    #[error("prime generation failed after {attempts} attempts")]
    PrimeGeneration { attempts: usize },
    #[error("invalid public key: {0}")]
    InvalidPublicKey(&'static str),
    #[error("weight {value} at index {index} exceeds the fixed-point slot capacity")]
    WeightOutOfRange { index: usize, value: f64 },
    #[error("non-finite weight at index {index}")]
    NonFiniteWeight { index: usize },
    #[error("slot value at index {index} does not fit the slot width")]
    SlotOverflow { index: usize },
    #[error("invalid codec parameters: {0}")]
    InvalidCodec(&'static str),
    #[error("ciphertexts were produced under different keys or codecs")]
    Mismatch,
    #[error("ciphertext is out of range or not coprime to n")]
    InvalidCiphertext,
    #[error("decrypted plaintext does not unpack into the expected slots")]
    MalformedPlaintext,
    #[error("claimed plaintext is not the decryption of the ciphertext")]
    ClaimMismatch,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("divisor must be at least 1")]
    ZeroDivisor,
    #[error("malformed encoding: {0}")]
    Malformed(&'static str),
    #[error("self-test failed: {0}")]
    SelfTest(&'static str),
}
