use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::HeError;

/// Fixed-point representation of real weights inside the plaintext space.
///
/// A weight `w` becomes the integer `round(w · 10^scale_exp)`. Negative
/// values live in the upper half of `Z_n`. Each packed slot is `slot_bits`
/// wide and reserves `ceil(log2(max_summands))` headroom bits so that the
/// sum of up to `max_summands` encodings never leaves the slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    pub scale_exp: u32,
    pub slot_bits: u32,
    pub max_summands: u32,
}

impl Default for FixedPointCodec {
    fn default() -> Self {
        Self {
            scale_exp: 10,
            slot_bits: 96,
            max_summands: 10,
        }
    }
}

impl FixedPointCodec {
    pub fn new(scale_exp: u32, slot_bits: u32, max_summands: u32) -> Result<Self, HeError> {
        let codec = Self {
            scale_exp,
            slot_bits,
            max_summands,
        };
        codec.validate()?;
        Ok(codec)
    }

    pub fn validate(&self) -> Result<(), HeError> {
        if self.scale_exp > 19 {
            return Err(HeError::InvalidCodec("scale must fit in 64 bits"));
        }
        if self.max_summands == 0 {
            return Err(HeError::InvalidCodec("max_summands must be positive"));
        }
        if self.slot_bits > 120 || self.slot_bits < self.headroom_bits() + 8 {
            return Err(HeError::InvalidCodec("slot width out of range"));
        }
        Ok(())
    }

    pub fn headroom_bits(&self) -> u32 {
        u32::BITS - (self.max_summands.max(1) - 1).leading_zeros()
    }

    /// Bits available to the magnitude of a single encoded weight.
    pub fn value_bits(&self) -> u32 {
        self.slot_bits - self.headroom_bits() - 1
    }

    pub fn scale(&self) -> f64 {
        10f64.powi(self.scale_exp as i32)
    }

    /// Largest real magnitude that still encodes.
    pub fn max_weight(&self) -> f64 {
        2f64.powi(self.value_bits() as i32) / self.scale()
    }

    /// `round(w · scale)` as a signed integer, or a range error.
    pub fn encode_value(&self, index: usize, w: f64) -> Result<i128, HeError> {
        if !w.is_finite() {
            return Err(HeError::NonFiniteWeight { index });
        }
        let scaled = (w * self.scale()).round();
        if scaled.abs() >= 2f64.powi(self.value_bits() as i32) {
            return Err(HeError::WeightOutOfRange { index, value: w });
        }
        Ok(scaled as i128)
    }
}

/// Maps a signed integer into `Z_n` using the lower-half/upper-half
/// convention.
pub fn to_residue(v: &BigInt, n: &BigUint) -> BigUint {
    let n = BigInt::from_biguint(Sign::Plus, n.clone());
    let r = ((v % &n) + &n) % &n;
    r.to_biguint().expect("non-negative after reduction")
}

/// Inverse of [`to_residue`]: residues above `n/2` are negative.
pub fn from_residue(r: &BigUint, n: &BigUint) -> BigInt {
    let r = r % n;
    let half = n >> 1;
    if r > half {
        BigInt::from_biguint(Sign::Plus, r) - BigInt::from_biguint(Sign::Plus, n.clone())
    } else {
        BigInt::from_biguint(Sign::Plus, r)
    }
}

/// Encodes real weights as residues mod `n`.
pub fn encode_weights(
    weights: &[f64],
    codec: &FixedPointCodec,
    n: &BigUint,
) -> Result<Vec<BigUint>, HeError> {
    weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let v = codec.encode_value(i, w)?;
            Ok(to_residue(&BigInt::from(v), n))
        })
        .collect()
}

/// Decodes residues into reals, dividing by `scale · divisor`. With
/// `divisor = N` this turns a slot-wise sum into the mean.
pub fn decode_weights(
    values: &[BigUint],
    codec: &FixedPointCodec,
    n: &BigUint,
    divisor: u64,
) -> Result<Vec<f64>, HeError> {
    if divisor == 0 {
        return Err(HeError::ZeroDivisor);
    }
    let denom = codec.scale() * divisor as f64;
    Ok(values
        .iter()
        .map(|r| signed_to_f64(&from_residue(r, n)) / denom)
        .collect())
}

fn signed_to_f64(v: &BigInt) -> f64 {
    if v.is_zero() {
        return 0.0;
    }
    match v.to_f64() {
        Some(x) => x,
        None if v.is_negative() => f64::NEG_INFINITY,
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n() -> BigUint {
        // Any large odd modulus exercises the residue convention.
        (BigUint::from(1u8) << 511) + BigUint::from(187u32)
    }

    #[test]
    fn half_encodes_to_five_billion() {
        let codec = FixedPointCodec::default();
        let out = encode_weights(&[0.5, 0.0], &codec, &n()).unwrap();
        assert_eq!(out, vec![BigUint::from(5_000_000_000u64), BigUint::zero()]);
    }

    #[test]
    fn negatives_use_upper_half() {
        let codec = FixedPointCodec::default();
        let n = n();
        let out = encode_weights(&[-1.25], &codec, &n).unwrap();
        assert_eq!(out[0], &n - BigUint::from(12_500_000_000u64));
        let back = decode_weights(&out, &codec, &n, 1).unwrap();
        assert_eq!(back, vec![-1.25]);
    }

    #[test]
    fn decode_divides_by_count() {
        let codec = FixedPointCodec::default();
        let n = n();
        let sum = [BigUint::from(15_000_000_000u64)];
        assert_eq!(decode_weights(&sum, &codec, &n, 3).unwrap(), vec![0.5]);
        assert_eq!(
            decode_weights(&[BigUint::zero()], &codec, &n, 1).unwrap(),
            vec![0.0]
        );
        let minus_one = [&n - BigUint::from(10_000_000_000u64)];
        assert_eq!(
            decode_weights(&minus_one, &codec, &n, 1).unwrap(),
            vec![-1.0]
        );
        assert_eq!(
            decode_weights(&sum, &codec, &n, 0).unwrap_err(),
            HeError::ZeroDivisor
        );
    }

    #[test]
    fn rejects_out_of_range_and_non_finite() {
        let codec = FixedPointCodec::default();
        let too_big = codec.max_weight() * 1.01;
        assert!(matches!(
            encode_weights(&[1.0, too_big], &codec, &n()),
            Err(HeError::WeightOutOfRange { index: 1, .. })
        ));
        assert!(matches!(
            encode_weights(&[f64::NAN], &codec, &n()),
            Err(HeError::NonFiniteWeight { index: 0 })
        ));
        // |w| < 10^13 fits the default 96-bit slots with 10 summands.
        assert!(encode_weights(&[9.9e12, -9.9e12], &codec, &n()).is_ok());
    }

    #[test]
    fn headroom_for_ten_summands_is_four_bits() {
        let codec = FixedPointCodec::default();
        assert_eq!(codec.headroom_bits(), 4);
        assert_eq!(codec.value_bits(), 91);
        assert_eq!(FixedPointCodec::new(10, 96, 1).unwrap().headroom_bits(), 0);
        assert_eq!(FixedPointCodec::new(10, 96, 16).unwrap().headroom_bits(), 4);
        assert_eq!(FixedPointCodec::new(10, 96, 17).unwrap().headroom_bits(), 5);
        assert!(FixedPointCodec::new(20, 96, 10).is_err());
    }

    proptest::proptest! {
        #[test]
        fn signed_round_trip(w in -1.0e6f64..1.0e6) {
            let codec = FixedPointCodec::default();
            let n = n();
            let enc = encode_weights(&[w], &codec, &n).unwrap();
            let dec = decode_weights(&enc, &codec, &n, 1).unwrap()[0];
            let expected = (w * codec.scale()).round() / codec.scale();
            proptest::prop_assert_eq!(dec, expected);
        }

        #[test]
        fn residue_round_trip(v in proptest::num::i128::ANY) {
            let n = n();
            let v = BigInt::from(v);
            proptest::prop_assert_eq!(from_residue(&to_residue(&v, &n), &n), v);
        }
    }
}
