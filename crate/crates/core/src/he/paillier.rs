use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};

use super::HeError;

/// Smallest modulus accepted even in simulation mode.
pub const MIN_MODULUS_BITS: u64 = 512;

const PRODUCTION_MODULUS_BITS: [u64; 2] = [2048, 3072];
const KEYGEN_ATTEMPTS: usize = 64;
const PRIME_CANDIDATES: usize = 100_000;

/// Which modulus sizes `keygen` accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeygenMode {
    /// 2048 or 3072 bit moduli only.
    Production,
    /// Any even size of at least 512 bits. Not secure; intended for fast
    /// simulation and tests.
    InsecureSimulation,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
}

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Result<Self, HeError> {
        if n.bits() < MIN_MODULUS_BITS {
            return Err(HeError::InvalidPublicKey("modulus below minimum size"));
        }
        if n.is_even() {
            return Err(HeError::InvalidPublicKey("modulus must be odd"));
        }
        let n_squared = &n * &n;
        Ok(Self { n, n_squared })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn modulus_bits(&self) -> u64 {
        self.n.bits()
    }

    /// Deterministic encryption `(1 + m·n) · r^n mod n²`.
    pub fn encrypt_with(&self, m: &BigUint, r: &BigUint) -> BigUint {
        let m = m % &self.n;
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        let rn = r.modpow(&self.n, &self.n_squared);
        (gm * rn) % &self.n_squared
    }

    pub fn encrypt<R: RngCore + CryptoRng>(&self, m: &BigUint, rng: &mut R) -> BigUint {
        let r = self.random_unit(rng);
        self.encrypt_with(m, &r)
    }

    /// Uniform element of `Z_n^*`.
    pub fn random_unit<R: RngCore + CryptoRng>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_below(&self.n);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    pub fn add(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.n_squared
    }

    /// True iff `c` lies in `[1, n²)` and is coprime to `n`.
    pub fn is_valid_ciphertext(&self, c: &BigUint) -> bool {
        !c.is_zero() && c < &self.n_squared && c.gcd(&self.n).is_one()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.n.to_bytes_be()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeError> {
        Self::from_modulus(BigUint::from_bytes_be(bytes))
    }
}

/// Paillier secret key in CRT form.
#[derive(Clone)]
pub struct SecretKey {
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    hp: BigUint,
    hq: BigUint,
    q_inv_p: BigUint,
    lambda: BigUint,
    n_inv_lambda: BigUint,
    public: PublicKey,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecretKey")
            .field("modulus_bits", &self.public.modulus_bits())
            .finish_non_exhaustive()
    }
}

impl SecretKey {
    fn from_primes(p: BigUint, q: BigUint) -> Option<Self> {
        let one = BigUint::one();
        let n = &p * &q;
        let p1 = &p - &one;
        let q1 = &q - &one;
        if !n.gcd(&(&p1 * &q1)).is_one() {
            return None;
        }
        let public = PublicKey::from_modulus(n.clone()).ok()?;
        let g = &n + &one;
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let hp = l_function(&g.modpow(&p1, &p_squared), &p).modinv(&p)?;
        let hq = l_function(&g.modpow(&q1, &q_squared), &q).modinv(&q)?;
        let q_inv_p = q.modinv(&p)?;
        let lambda = p1.lcm(&q1);
        let n_inv_lambda = n.modinv(&lambda)?;
        Some(Self {
            p,
            q,
            p_squared,
            q_squared,
            hp,
            hq,
            q_inv_p,
            lambda,
            n_inv_lambda,
            public,
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    /// Carmichael function `λ = lcm(p − 1, q − 1)`.
    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    /// Raw Paillier decryption. Rejects ciphertexts outside `Z*_{n²}`.
    pub fn decrypt(&self, c: &BigUint) -> Result<BigUint, HeError> {
        if !self.public.is_valid_ciphertext(c) {
            return Err(HeError::InvalidCiphertext);
        }
        let one = BigUint::one();
        let cp = c.modpow(&(&self.p - &one), &self.p_squared);
        let mp = (l_function(&cp, &self.p) * &self.hp) % &self.p;
        let cq = c.modpow(&(&self.q - &one), &self.q_squared);
        let mq = (l_function(&cq, &self.q) * &self.hq) % &self.q;
        // Garner recombination: m = mq + q·((mp − mq)·q⁻¹ mod p)
        let diff = (&mp + &self.p - (&mq % &self.p)) % &self.p;
        let h = (diff * &self.q_inv_p) % &self.p;
        Ok(mq + h * &self.q)
    }

    /// Recovers the encryption randomness of `c` assuming it encrypts `m`:
    /// `r = (c · g^(−m))^(n⁻¹ mod λ) mod n`. Only meaningful when `m` is the
    /// true plaintext; callers check by re-encrypting.
    pub fn recover_randomness(&self, c: &BigUint, m: &BigUint) -> BigUint {
        let n = self.public.n();
        let n2 = self.public.n_squared();
        // g^(−m) = 1 − m·n (mod n²) for g = n + 1
        let mn = ((m % n) * n) % n2;
        let g_inv_m = (n2 + BigUint::one() - mn) % n2;
        let rn = (c * g_inv_m) % n2;
        (rn % n).modpow(&self.n_inv_lambda, n)
    }
}

fn l_function(x: &BigUint, d: &BigUint) -> BigUint {
    (x - BigUint::one()) / d
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
    pub modulus_bits: u64,
}

/// Generates a Paillier key pair with an `n` of exactly `modulus_bits` bits.
///
/// The result is a pure function of the randomness source, so a seeded
/// generator reproduces the same pair.
pub fn keygen<R: RngCore + CryptoRng>(
    modulus_bits: u64,
    mode: KeygenMode,
    rng: &mut R,
) -> Result<KeyPair, HeError> {
    if modulus_bits < MIN_MODULUS_BITS {
        return Err(HeError::ModulusTooSmall { bits: modulus_bits });
    }
    let allowed = match mode {
        KeygenMode::Production => PRODUCTION_MODULUS_BITS.contains(&modulus_bits),
        KeygenMode::InsecureSimulation => modulus_bits % 2 == 0,
    };
    if !allowed {
        return Err(HeError::UnsupportedModulus { bits: modulus_bits });
    }
    let half = modulus_bits / 2;
    for _ in 0..KEYGEN_ATTEMPTS {
        let p = random_prime(half, rng)?;
        let q = random_prime(half, rng)?;
        if p == q {
            continue;
        }
        if (&p * &q).bits() != modulus_bits {
            continue;
        }
        if let Some(secret) = SecretKey::from_primes(p, q) {
            return Ok(KeyPair {
                public: secret.public.clone(),
                secret,
                modulus_bits,
            });
        }
    }
    Err(HeError::PrimeGeneration {
        attempts: KEYGEN_ATTEMPTS,
    })
}

/// Random prime with its two top bits set, so the product of two such
/// primes has exactly twice the bit length.
fn random_prime<R: RngCore + CryptoRng>(bits: u64, rng: &mut R) -> Result<BigUint, HeError> {
    for _ in 0..PRIME_CANDIDATES {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if glass_pumpkin::prime::strong_check_with(&candidate, rng) {
            return Ok(candidate);
        }
    }
    Err(HeError::PrimeGeneration {
        attempts: PRIME_CANDIDATES,
    })
}
