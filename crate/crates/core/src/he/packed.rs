use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{Signed, Zero};
use rand::{CryptoRng, RngCore};
use rayon::prelude::*;

use super::codec::{from_residue, to_residue, FixedPointCodec};
use super::paillier::{PublicKey, SecretKey};
use super::HeError;

/// The codec parameters that travel with a ciphertext.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodecDescriptor {
    pub scale_exp: u32,
    pub slot_bits: u16,
}

impl From<&FixedPointCodec> for CodecDescriptor {
    fn from(c: &FixedPointCodec) -> Self {
        Self {
            scale_exp: c.scale_exp,
            slot_bits: c.slot_bits as u16,
        }
    }
}

/// A weight vector encrypted as a list of Paillier ciphertexts, each
/// holding up to `slots_per_ciphertext` fixed-point values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCiphertext {
    ciphertexts: Vec<BigUint>,
    weight_count: u32,
    slots_per_ciphertext: u16,
    codec: CodecDescriptor,
}

pub fn ciphertext_count(weight_count: usize, slots_per_ciphertext: usize) -> usize {
    weight_count.div_ceil(slots_per_ciphertext)
}

/// Slots that fit one plaintext while keeping the packed signed value
/// strictly inside `(−n/2, n/2)`.
pub(crate) fn max_slots(modulus_bits: u64, slot_bits: u32) -> usize {
    ((modulus_bits - 1) / slot_bits as u64) as usize
}

impl PackedCiphertext {
    pub fn ciphertexts(&self) -> &[BigUint] {
        &self.ciphertexts
    }

    pub fn weight_count(&self) -> usize {
        self.weight_count as usize
    }

    pub fn slots_per_ciphertext(&self) -> usize {
        self.slots_per_ciphertext as usize
    }

    pub fn codec(&self) -> CodecDescriptor {
        self.codec
    }

    /// Number of slots carried by ciphertext `index`.
    pub(crate) fn slots_in(&self, index: usize) -> usize {
        let per = self.slots_per_ciphertext();
        (self.weight_count() - index * per).min(per)
    }

    /// Big-endian wire form:
    /// `weight_count u32 | slots u16 | slot_bits u16 | scale_exp u64 |
    ///  count u32 | (len u32 | bytes)*`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.ciphertexts.len() * 132);
        out.extend_from_slice(&self.weight_count.to_be_bytes());
        out.extend_from_slice(&self.slots_per_ciphertext.to_be_bytes());
        out.extend_from_slice(&self.codec.slot_bits.to_be_bytes());
        out.extend_from_slice(&(self.codec.scale_exp as u64).to_be_bytes());
        out.extend_from_slice(&(self.ciphertexts.len() as u32).to_be_bytes());
        for c in &self.ciphertexts {
            let bytes = c.to_bytes_be();
            out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeError> {
        let mut cur = bytes;
        let weight_count = take_u32(&mut cur)?;
        let slots = take_u16(&mut cur)?;
        let slot_bits = take_u16(&mut cur)?;
        let scale_exp = take_u64(&mut cur)?;
        let count = take_u32(&mut cur)? as usize;
        if slots == 0 || scale_exp > 19 {
            return Err(HeError::Malformed("bad packing header"));
        }
        if count != ciphertext_count(weight_count as usize, slots as usize) {
            return Err(HeError::Malformed("ciphertext count disagrees with header"));
        }
        let mut ciphertexts = Vec::with_capacity(count);
        for _ in 0..count {
            let len = take_u32(&mut cur)? as usize;
            if cur.len() < len {
                return Err(HeError::Malformed("truncated ciphertext"));
            }
            ciphertexts.push(BigUint::from_bytes_be(&cur[..len]));
            cur = &cur[len..];
        }
        if !cur.is_empty() {
            return Err(HeError::Malformed("trailing bytes"));
        }
        Ok(Self {
            ciphertexts,
            weight_count,
            slots_per_ciphertext: slots,
            codec: CodecDescriptor {
                scale_exp: scale_exp as u32,
                slot_bits,
            },
        })
    }
}

fn take<'a>(cur: &mut &'a [u8], n: usize) -> Result<&'a [u8], HeError> {
    if cur.len() < n {
        return Err(HeError::Malformed("truncated header"));
    }
    let (head, rest) = cur.split_at(n);
    *cur = rest;
    Ok(head)
}

fn take_u16(cur: &mut &[u8]) -> Result<u16, HeError> {
    Ok(u16::from_be_bytes(take(cur, 2)?.try_into().unwrap()))
}

fn take_u32(cur: &mut &[u8]) -> Result<u32, HeError> {
    Ok(u32::from_be_bytes(take(cur, 4)?.try_into().unwrap()))
}

fn take_u64(cur: &mut &[u8]) -> Result<u64, HeError> {
    Ok(u64::from_be_bytes(take(cur, 8)?.try_into().unwrap()))
}

/// Packs signed slot values `s_0, s_1, …` into `Σ s_i · 2^(slot_bits·i)`
/// reduced mod `n`.
pub(crate) fn pack_group(values: &[BigInt], slot_bits: u32, n: &BigUint) -> BigUint {
    let mut acc = BigInt::zero();
    for v in values.iter().rev() {
        acc <<= slot_bits;
        acc += v;
    }
    to_residue(&acc, n)
}

/// Splits a decrypted plaintext back into `count` signed slots. Fails if
/// anything is left over, which is what a wrong key or a tampered
/// ciphertext produces.
pub(crate) fn unpack_group(
    plaintext: &BigUint,
    count: usize,
    slot_bits: u32,
    n: &BigUint,
) -> Result<Vec<BigInt>, HeError> {
    let mut rest = from_residue(plaintext, n);
    let modulus = BigInt::from(1u8) << slot_bits;
    let half = BigInt::from(1u8) << (slot_bits - 1);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut low = rest.mod_floor(&modulus);
        if low >= half {
            low -= &modulus;
        }
        rest = (rest - &low) >> slot_bits;
        out.push(low);
    }
    if !rest.is_zero() {
        return Err(HeError::MalformedPlaintext);
    }
    Ok(out)
}

/// Converts residue slots into signed values and checks the slot width.
pub(crate) fn signed_slots(
    slots: &[BigUint],
    slot_bits: u32,
    n: &BigUint,
) -> Result<Vec<BigInt>, HeError> {
    let limit = BigInt::from(1u8) << (slot_bits - 1);
    slots
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let v = from_residue(r, n);
            if v.abs() >= limit {
                Err(HeError::SlotOverflow { index })
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// Encrypts plaintext slots (residues mod `n`) with the widest packing the
/// key allows.
pub fn encrypt_packed<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    plaintext_slots: &[BigUint],
    codec: &FixedPointCodec,
    rng: &mut R,
) -> Result<PackedCiphertext, HeError> {
    let slots = max_slots(pk.modulus_bits(), codec.slot_bits);
    encrypt_packed_with_layout(pk, plaintext_slots, codec, slots, rng)
}

pub fn encrypt_packed_with_layout<R: RngCore + CryptoRng>(
    pk: &PublicKey,
    plaintext_slots: &[BigUint],
    codec: &FixedPointCodec,
    slots_per_ciphertext: usize,
    rng: &mut R,
) -> Result<PackedCiphertext, HeError> {
    codec.validate()?;
    let capacity = max_slots(pk.modulus_bits(), codec.slot_bits);
    if slots_per_ciphertext == 0 || slots_per_ciphertext > capacity {
        return Err(HeError::InvalidCodec(
            "slots per ciphertext exceed key capacity",
        ));
    }
    let weight_count = u32::try_from(plaintext_slots.len())
        .map_err(|_| HeError::InvalidCodec("too many weights"))?;
    let signed = signed_slots(plaintext_slots, codec.slot_bits, pk.n())?;
    // Randomness is drawn in order so the result does not depend on threading.
    let units: Vec<BigUint> = (0..signed.len().div_ceil(slots_per_ciphertext))
        .map(|_| pk.random_unit(rng))
        .collect();
    let ciphertexts = signed
        .par_chunks(slots_per_ciphertext)
        .zip(units.par_iter())
        .map(|(group, r)| pk.encrypt_with(&pack_group(group, codec.slot_bits, pk.n()), r))
        .collect();
    Ok(PackedCiphertext {
        ciphertexts,
        weight_count,
        slots_per_ciphertext: slots_per_ciphertext as u16,
        codec: codec.into(),
    })
}

/// Slot-wise sum of two packed ciphertexts under the same key and layout.
pub fn homomorphic_add(
    pk: &PublicKey,
    a: &PackedCiphertext,
    b: &PackedCiphertext,
) -> Result<PackedCiphertext, HeError> {
    if a.codec != b.codec
        || a.weight_count != b.weight_count
        || a.slots_per_ciphertext != b.slots_per_ciphertext
        || a.ciphertexts.len() != b.ciphertexts.len()
    {
        return Err(HeError::Mismatch);
    }
    let ciphertexts = a
        .ciphertexts
        .par_iter()
        .zip(b.ciphertexts.par_iter())
        .map(|(x, y)| {
            if !pk.is_valid_ciphertext(x) || !pk.is_valid_ciphertext(y) {
                return Err(HeError::Mismatch);
            }
            Ok(pk.add(x, y))
        })
        .collect::<Result<_, _>>()?;
    Ok(PackedCiphertext {
        ciphertexts,
        ..a.clone()
    })
}

/// Decrypts and unpacks every slot, returning residues mod `n`.
pub fn decrypt_packed(sk: &SecretKey, c: &PackedCiphertext) -> Result<Vec<BigUint>, HeError> {
    let n = sk.public_key().n();
    let slot_bits = c.codec.slot_bits as u32;
    let groups: Vec<Vec<BigUint>> = c
        .ciphertexts
        .par_iter()
        .enumerate()
        .map(|(i, ct)| {
            let m = sk.decrypt(ct)?;
            Ok(unpack_group(&m, c.slots_in(i), slot_bits, n)?
                .iter()
                .map(|v| to_residue(v, n))
                .collect())
        })
        .collect::<Result<_, HeError>>()?;
    Ok(groups.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he::{encode_weights, keygen, KeyPair, KeygenMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn key() -> KeyPair {
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        keygen(512, KeygenMode::InsecureSimulation, &mut rng).unwrap()
    }

    fn residues(values: &[i64], n: &BigUint) -> Vec<BigUint> {
        values
            .iter()
            .map(|&v| to_residue(&BigInt::from(v), n))
            .collect()
    }

    #[test]
    fn round_trip_small_vector() {
        let kp = key();
        let codec = FixedPointCodec::default();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let slots = residues(&[1, 2, 3], kp.public.n());
        let c = encrypt_packed(&kp.public, &slots, &codec, &mut rng).unwrap();
        assert_eq!(c.ciphertexts().len(), 1);
        assert_eq!(decrypt_packed(&kp.secret, &c).unwrap(), slots);
    }

    #[test]
    fn probabilistic_encryption() {
        let kp = key();
        let codec = FixedPointCodec::default();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let slots = residues(&[7], kp.public.n());
        let a = encrypt_packed(&kp.public, &slots, &codec, &mut rng).unwrap();
        let b = encrypt_packed(&kp.public, &slots, &codec, &mut rng).unwrap();
        assert_ne!(a.ciphertexts(), b.ciphertexts());
        assert_eq!(decrypt_packed(&kp.secret, &a).unwrap(), slots);
    }

    #[test]
    fn layout_counts() {
        // 512-bit keys hold five 96-bit slots, 2048-bit keys hold twenty-one.
        assert_eq!(max_slots(512, 96), 5);
        assert_eq!(max_slots(2048, 96), 21);
        assert_eq!(ciphertext_count(2_007_402, 8), 250_926);
        assert_eq!(ciphertext_count(10, 5), 2);
        assert_eq!(ciphertext_count(11, 5), 3);
    }

    #[test]
    fn explicit_layout_is_respected() {
        let kp = key();
        let codec = FixedPointCodec::default();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let slots = residues(&[1, -2, 3, -4, 5, -6, 7], kp.public.n());
        let c = encrypt_packed_with_layout(&kp.public, &slots, &codec, 2, &mut rng).unwrap();
        assert_eq!(c.ciphertexts().len(), 4);
        assert_eq!(c.slots_per_ciphertext(), 2);
        assert_eq!(decrypt_packed(&kp.secret, &c).unwrap(), slots);
        assert!(encrypt_packed_with_layout(&kp.public, &slots, &codec, 6, &mut rng).is_err());
    }

    #[test]
    fn zero_plus_zero() {
        let kp = key();
        let codec = FixedPointCodec::default();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let z = residues(&[0], kp.public.n());
        let a = encrypt_packed(&kp.public, &z, &codec, &mut rng).unwrap();
        let b = encrypt_packed(&kp.public, &z, &codec, &mut rng).unwrap();
        let s = homomorphic_add(&kp.public, &a, &b).unwrap();
        assert_eq!(decrypt_packed(&kp.secret, &s).unwrap(), z);
    }

    #[test]
    fn sums_match_plaintext_oracle() {
        let kp = key();
        let codec = FixedPointCodec::default();
        let n = kp.public.n();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let half = residues(&[5_000_000_000], n);
        let a = encrypt_packed(&kp.public, &half, &codec, &mut rng).unwrap();
        let b = encrypt_packed(&kp.public, &half, &codec, &mut rng).unwrap();
        let s = homomorphic_add(&kp.public, &a, &b).unwrap();
        assert_eq!(
            decrypt_packed(&kp.secret, &s).unwrap(),
            residues(&[10_000_000_000], n)
        );

        let one = residues(&[1], n);
        let mut acc = encrypt_packed(&kp.public, &one, &codec, &mut rng).unwrap();
        for _ in 1..10 {
            let next = encrypt_packed(&kp.public, &one, &codec, &mut rng).unwrap();
            acc = homomorphic_add(&kp.public, &acc, &next).unwrap();
        }
        assert_eq!(
            decrypt_packed(&kp.secret, &acc).unwrap(),
            residues(&[10], n)
        );
    }

    #[test]
    fn boundary_values_never_bleed_into_neighbours() {
        let kp = key();
        let codec = FixedPointCodec::default();
        let n = kp.public.n();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let max: BigInt = (BigInt::from(1u8) << codec.value_bits()) - 1u8;
        let pattern: Vec<BigInt> = (0..12)
            .map(|i| {
                if i % 2 == 0 {
                    max.clone()
                } else {
                    -max.clone()
                }
            })
            .collect();
        let slots: Vec<BigUint> = pattern.iter().map(|v| to_residue(v, n)).collect();
        let mut acc = encrypt_packed(&kp.public, &slots, &codec, &mut rng).unwrap();
        for _ in 1..codec.max_summands {
            let next = encrypt_packed(&kp.public, &slots, &codec, &mut rng).unwrap();
            acc = homomorphic_add(&kp.public, &acc, &next).unwrap();
        }
        let k = BigInt::from(codec.max_summands);
        let expected: Vec<BigUint> = pattern.iter().map(|v| to_residue(&(v * &k), n)).collect();
        assert_eq!(decrypt_packed(&kp.secret, &acc).unwrap(), expected);
    }

    #[test]
    fn mismatched_layouts_are_rejected() {
        let kp = key();
        let codec = FixedPointCodec::default();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let a = encrypt_packed(
            &kp.public,
            &residues(&[1, 2], kp.public.n()),
            &codec,
            &mut rng,
        )
        .unwrap();
        let b =
            encrypt_packed(&kp.public, &residues(&[1], kp.public.n()), &codec, &mut rng).unwrap();
        assert_eq!(
            homomorphic_add(&kp.public, &a, &b).unwrap_err(),
            HeError::Mismatch
        );
    }

    #[test]
    fn wrong_key_does_not_unpack() {
        let kp = key();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let other = keygen(512, KeygenMode::InsecureSimulation, &mut rng).unwrap();
        let codec = FixedPointCodec::default();
        let slots = encode_weights(&[0.25, -0.5, 1.0], &codec, kp.public.n()).unwrap();
        let c = encrypt_packed(&kp.public, &slots, &codec, &mut rng).unwrap();
        assert!(decrypt_packed(&other.secret, &c).is_err());
    }

    #[test]
    fn slot_overflow_detected() {
        let kp = key();
        let codec = FixedPointCodec::default();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let too_big = to_residue(&(BigInt::from(1u8) << 95), kp.public.n());
        assert_eq!(
            encrypt_packed(&kp.public, &[too_big], &codec, &mut rng).unwrap_err(),
            HeError::SlotOverflow { index: 0 }
        );
    }

    #[test]
    fn serialization_round_trip_and_rejects_truncation() {
        let kp = key();
        let codec = FixedPointCodec::default();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let w: Vec<f64> = (0..13).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let slots = encode_weights(&w, &codec, kp.public.n()).unwrap();
        let c = encrypt_packed(&kp.public, &slots, &codec, &mut rng).unwrap();
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..4], &13u32.to_be_bytes());
        assert_eq!(&bytes[4..6], &5u16.to_be_bytes());
        assert_eq!(&bytes[6..8], &96u16.to_be_bytes());
        assert_eq!(&bytes[8..16], &10u64.to_be_bytes());
        assert_eq!(PackedCiphertext::from_bytes(&bytes).unwrap(), c);
        assert!(PackedCiphertext::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
