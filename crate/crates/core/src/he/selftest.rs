use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    decode_weights, decrypt_packed, encode_weights, encrypt_packed, generate_signing_key,
    homomorphic_add, keygen, prove_decryption, sign_message, verify_decryption, verify_signature,
    FixedPointCodec, HeError, KeygenMode,
};

/// Known-answer and round-trip checks of every primitive the protocol uses:
/// a chain sum of three packed vectors, its decryption proof, a tampered
/// proof and a tampered signature.
pub fn self_test(key_bits: u64, seed: u64) -> Result<(), HeError> {
    let fail = HeError::SelfTest;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mode = if key_bits >= 2048 {
        KeygenMode::Production
    } else {
        KeygenMode::InsecureSimulation
    };
    let keys = keygen(key_bits, mode, &mut rng)?;
    let (pk, sk) = (&keys.public, &keys.secret);
    let n = pk.n();

    // Fixed inputs: small integers whose encrypted round trip must be exact.
    let one = encrypt_packed(
        pk,
        &encode_weights(&[1.0], &FixedPointCodec::default(), n)?,
        &FixedPointCodec::default(),
        &mut rng,
    )?;
    let two = homomorphic_add(pk, &one, &one)?;
    let back = decode_weights(
        &decrypt_packed(sk, &two)?,
        &FixedPointCodec::default(),
        n,
        1,
    )?;
    if back != [2.0] {
        return Err(fail("1 + 1 did not decrypt to 2"));
    }

    let codec = FixedPointCodec::new(10, 96, 3)?;
    let vectors: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..17).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let mut acc = None;
    for v in &vectors {
        let c = encrypt_packed(pk, &encode_weights(v, &codec, n)?, &codec, &mut rng)?;
        acc = Some(match acc {
            None => c,
            Some(a) => homomorphic_add(pk, &a, &c)?,
        });
    }
    let acc = acc.expect("three vectors");
    let slots = decrypt_packed(sk, &acc)?;
    let mean = decode_weights(&slots, &codec, n, 3)?;
    for (i, m) in mean.iter().enumerate() {
        let expect = vectors.iter().map(|v| v[i]).sum::<f64>() / 3.0;
        if (m - expect).abs() > 1e-9 {
            return Err(fail("chain sum decrypted to the wrong mean"));
        }
    }

    let proof = prove_decryption(sk, &acc, &slots)?;
    if !verify_decryption(pk, &acc, &slots, &proof) {
        return Err(fail("valid decryption proof rejected"));
    }
    let mut forged = slots.clone();
    forged[0] += 1u32;
    if verify_decryption(pk, &acc, &forged, &proof) {
        return Err(fail("proof accepted for a wrong plaintext"));
    }

    let key = generate_signing_key(&mut rng);
    let msg = b"self-test";
    let sig = sign_message(&key, msg);
    if !verify_signature(&key.verifying_key(), msg, &sig) {
        return Err(fail("valid signature rejected"));
    }
    if verify_signature(&key.verifying_key(), b"self-tesT", &sig) {
        return Err(fail("signature accepted for a different message"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    #[test]
    fn passes_at_simulation_size() {
        super::self_test(512, 3).unwrap();
    }
}
