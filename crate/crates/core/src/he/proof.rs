use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rayon::prelude::*;

use super::packed::{pack_group, signed_slots, PackedCiphertext};
use super::paillier::{PublicKey, SecretKey};
use super::HeError;

/// Proof that a packed ciphertext decrypts to a published plaintext: the
/// encryption randomness of every ciphertext, recovered with the secret key.
/// Anyone holding the public key re-encrypts and compares.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecryptionProof {
    pub randomness: Vec<BigUint>,
}

impl DecryptionProof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.randomness.len() as u32).to_be_bytes());
        for r in &self.randomness {
            let b = r.to_bytes_be();
            out.extend_from_slice(&(b.len() as u32).to_be_bytes());
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeError> {
        let mut cur = bytes;
        let mut next = |n: usize| -> Result<&[u8], HeError> {
            if cur.len() < n {
                return Err(HeError::Malformed("truncated proof"));
            }
            let (h, t) = cur.split_at(n);
            cur = t;
            Ok(h)
        };
        let count = u32::from_be_bytes(next(4)?.try_into().unwrap()) as usize;
        let mut randomness = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u32::from_be_bytes(next(4)?.try_into().unwrap()) as usize;
            randomness.push(BigUint::from_bytes_be(next(len)?));
        }
        if !cur.is_empty() {
            return Err(HeError::Malformed("trailing bytes after proof"));
        }
        Ok(Self { randomness })
    }
}

fn packed_plaintexts(
    n: &BigUint,
    c: &PackedCiphertext,
    claimed: &[BigUint],
) -> Result<Vec<BigUint>, HeError> {
    if claimed.len() != c.weight_count() {
        return Err(HeError::LengthMismatch {
            expected: c.weight_count(),
            actual: claimed.len(),
        });
    }
    let slot_bits = c.codec().slot_bits as u32;
    let signed = signed_slots(claimed, slot_bits, n)?;
    Ok(signed
        .chunks(c.slots_per_ciphertext())
        .map(|g| pack_group(g, slot_bits, n))
        .collect())
}

/// Builds a proof for `claimed_plaintexts` (residue slots, as returned by
/// `decrypt_packed`). Fails if the claim is not the true decryption.
pub fn prove_decryption(
    sk: &SecretKey,
    c: &PackedCiphertext,
    claimed_plaintexts: &[BigUint],
) -> Result<DecryptionProof, HeError> {
    let pk = sk.public_key();
    let plaintexts = packed_plaintexts(pk.n(), c, claimed_plaintexts)?;
    let randomness = c
        .ciphertexts()
        .par_iter()
        .zip(plaintexts.par_iter())
        .map(|(ct, m)| {
            if !pk.is_valid_ciphertext(ct) {
                return Err(HeError::InvalidCiphertext);
            }
            let r = sk.recover_randomness(ct, m);
            if &pk.encrypt_with(m, &r) != ct {
                return Err(HeError::ClaimMismatch);
            }
            Ok(r)
        })
        .collect::<Result<_, _>>()?;
    Ok(DecryptionProof { randomness })
}

/// True iff re-encrypting every claimed plaintext group with the proof's
/// randomness reproduces the ciphertext exactly.
pub fn verify_decryption(
    pk: &PublicKey,
    c: &PackedCiphertext,
    claimed_plaintexts: &[BigUint],
    proof: &DecryptionProof,
) -> bool {
    let Ok(plaintexts) = packed_plaintexts(pk.n(), c, claimed_plaintexts) else {
        return false;
    };
    if proof.randomness.len() != c.ciphertexts().len() {
        return false;
    }
    c.ciphertexts()
        .par_iter()
        .zip(plaintexts.par_iter())
        .zip(proof.randomness.par_iter())
        .all(|((ct, m), r)| {
            !r.is_zero() && r < pk.n() && r.gcd(pk.n()).is_one() && &pk.encrypt_with(m, r) == ct
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::{
        decrypt_packed, encode_weights, encrypt_packed, homomorphic_add, keygen, FixedPointCodec,
        KeyPair, KeygenMode,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (KeyPair, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let kp = keygen(512, KeygenMode::InsecureSimulation, &mut rng).unwrap();
        (kp, rng)
    }

    #[test]
    fn valid_proof_verifies() {
        let (kp, mut rng) = setup();
        let codec = FixedPointCodec::default();
        let slots =
            encode_weights(&[0.1, -0.2, 0.3, 0.4, -0.5, 0.6], &codec, kp.public.n()).unwrap();
        let c = encrypt_packed(&kp.public, &slots, &codec, &mut rng).unwrap();
        let m = decrypt_packed(&kp.secret, &c).unwrap();
        let proof = prove_decryption(&kp.secret, &c, &m).unwrap();
        assert!(verify_decryption(&kp.public, &c, &m, &proof));
        let bytes = proof.to_bytes();
        assert_eq!(DecryptionProof::from_bytes(&bytes).unwrap(), proof);
    }

    #[test]
    fn proving_a_false_claim_fails() {
        let (kp, mut rng) = setup();
        let codec = FixedPointCodec::default();
        let slots = encode_weights(&[1.0, 2.0], &codec, kp.public.n()).unwrap();
        let c = encrypt_packed(&kp.public, &slots, &codec, &mut rng).unwrap();
        let mut wrong = decrypt_packed(&kp.secret, &c).unwrap();
        wrong[1] += 1u8;
        assert_eq!(
            prove_decryption(&kp.secret, &c, &wrong).unwrap_err(),
            HeError::ClaimMismatch
        );
    }

    #[test]
    fn tampering_is_detected() {
        let (kp, mut rng) = setup();
        let codec = FixedPointCodec::default();
        let slots = encode_weights(&[0.5, 0.25, -0.75], &codec, kp.public.n()).unwrap();
        let c = encrypt_packed(&kp.public, &slots, &codec, &mut rng).unwrap();
        let m = decrypt_packed(&kp.secret, &c).unwrap();
        let proof = prove_decryption(&kp.secret, &c, &m).unwrap();

        let mut plus = m.clone();
        plus[0] += 1u8;
        assert!(!verify_decryption(&kp.public, &c, &plus, &proof));
        let mut minus = m.clone();
        minus[2] = (&minus[2] + kp.public.n() - 1u8) % kp.public.n();
        assert!(!verify_decryption(&kp.public, &c, &minus, &proof));

        let mut bad = proof.clone();
        bad.randomness[0] += 1u8;
        assert!(!verify_decryption(&kp.public, &c, &m, &bad));
        let short = DecryptionProof { randomness: vec![] };
        assert!(!verify_decryption(&kp.public, &c, &m, &short));
        assert!(!verify_decryption(&kp.public, &c, &m[..2], &proof));
    }

    #[test]
    fn three_party_sum_proof_verifies_for_everyone() {
        let (kp, mut rng) = setup();
        let codec = FixedPointCodec::default();
        let parts = [[0.3, -1.0], [0.6, 2.0], [0.9, 0.5]];
        let mut acc = None;
        for w in &parts {
            let s = encode_weights(w, &codec, kp.public.n()).unwrap();
            let c = encrypt_packed(&kp.public, &s, &codec, &mut rng).unwrap();
            acc = Some(match acc {
                None => c,
                Some(a) => homomorphic_add(&kp.public, &a, &c).unwrap(),
            });
        }
        let acc = acc.unwrap();
        let sum = decrypt_packed(&kp.secret, &acc).unwrap();
        let proof = prove_decryption(&kp.secret, &acc, &sum).unwrap();
        // Each participant only holds the public key.
        let pk_only = PublicKey::from_bytes(&kp.public.to_bytes()).unwrap();
        for _ in 0..3 {
            assert!(verify_decryption(&pk_only, &acc, &sum, &proof));
        }
    }

    #[test]
    fn randomized_falsification() {
        let (kp, mut rng) = setup();
        let codec = FixedPointCodec::default();
        for _ in 0..50 {
            let w: Vec<f64> = (0..7).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let s = encode_weights(&w, &codec, kp.public.n()).unwrap();
            let c = encrypt_packed(&kp.public, &s, &codec, &mut rng).unwrap();
            let proof = prove_decryption(&kp.secret, &c, &s).unwrap();
            let mut wrong = s.clone();
            let idx = rng.gen_range(0..wrong.len());
            let delta = BigUint::from(rng.gen_range(1u64..1_000_000_000));
            wrong[idx] = (&wrong[idx] + delta) % kp.public.n();
            assert!(!verify_decryption(&kp.public, &c, &wrong, &proof));
        }
    }
}
