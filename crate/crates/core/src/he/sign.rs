//! Ed25519 signatures over canonical message bytes.

use ed25519_dalek::{Signer, Verifier};
use rand::{CryptoRng, RngCore};

pub use ed25519_dalek::{Signature, SigningKey, VerifyingKey};

pub fn generate_signing_key<R: RngCore + CryptoRng>(rng: &mut R) -> SigningKey {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    SigningKey::from_bytes(&seed)
}

pub fn sign_message(key: &SigningKey, message: &[u8]) -> Signature {
    key.sign(message)
}

pub fn verify_signature(key: &VerifyingKey, message: &[u8], signature: &Signature) -> bool {
    key.verify(message, signature).is_ok() && key.verify_strict(message, signature).is_ok()
}
