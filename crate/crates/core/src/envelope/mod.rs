//! The synergy envelope, the final aggregate message, and their canonical
//! signed byte encodings.
//!
//! A synergy is a chain: the initiator seals its weights under its own
//! Paillier key, every participant adds its encrypted weights and forwards,
//! and the last participant routes the accumulated sum back to the
//! initiator, who decrypts, proves the decryption and broadcasts the mean.
//! Each hop re-signs the envelope with its own Ed25519 key.

mod wire;

use std::fmt;

use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::he::{
    decode_weights, decrypt_packed, encode_weights, encrypt_packed, homomorphic_add,
    prove_decryption, sign_message, verify_decryption, verify_signature, CodecDescriptor,
    DecryptionProof, FixedPointCodec, HeError, KeyPair, PackedCiphertext, PublicKey, Signature,
    SigningKey, VerifyingKey,
};
use wire::{Reader, Writer};

/// Smallest synergy (initiator included) that may complete.
pub const MIN_SYNERGY_SIZE: usize = 3;

const ENVELOPE_MAGIC: &[u8; 4] = b"P4LE";
const FINAL_MAGIC: &[u8; 4] = b"P4LF";
const WIRE_VERSION: u8 = 1;

const KIND_FORWARD: u8 = 1;
const KIND_RETURN: u8 = 2;
const PAYLOAD_PACKED: u8 = 1;
const PAYLOAD_PLAIN: u8 = 2;
const EVIDENCE_DECRYPTION: u8 = 1;
const EVIDENCE_PLAIN: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("synergy of {size} peers is below the minimum of {MIN_SYNERGY_SIZE}")]
    SynergyTooSmall { size: usize },
    #[error("signature does not verify under the sender key")]
    BadSignature,
    #[error("peer {0} already participates in this synergy")]
    DuplicateParticipant(PeerAddress),
    #[error("envelope has no remaining slots")]
    Exhausted,
    #[error("envelope is not terminal")]
    NotTerminal,
    #[error("only the initiator can finalize a synergy")]
    NotInitiator,
    #[error("only the last participant can re-sign an envelope")]
    NotSender,
    #[error("encrypted synergy requires the initiator key pair")]
    MissingKey,
    #[error("plaintext and encrypted payloads cannot be mixed")]
    ModeMismatch,
    #[error("decryption proof does not verify")]
    InvalidProof,
    #[error("aggregate does not match the proven sums")]
    AggregateMismatch,
    #[error("malformed message: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Crypto(#[from] HeError),
}

macro_rules! hex_id {
    ($name:ident, $len:expr) => {
        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self)
            }
        }

        impl std::str::FromStr for $name {
            type Err = hex::FromHexError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let mut out = [0u8; $len];
                hex::decode_to_slice(s, &mut out)?;
                Ok(Self(out))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(de::Error::custom)
            }
        }
    };
}

/// Opaque 16-byte peer identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerAddress(pub [u8; 16]);

hex_id!(PeerAddress, 16);

impl PeerAddress {
    /// Address of the `index`-th simulated peer. The index sits in the first
    /// eight bytes so the simulator can map addresses back cheaply.
    pub fn from_index(index: u64) -> Self {
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&index.to_be_bytes());
        let tag = Sha256::digest(index.to_be_bytes());
        out[8..].copy_from_slice(&tag[..8]);
        Self(out)
    }

    pub fn index(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().expect("8 bytes"))
    }
}

/// Synergy identifier: `sha256(initiator identity ‖ origin timestamp)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SynergyId(pub [u8; 32]);

hex_id!(SynergyId, 32);

impl SynergyId {
    /// `identity` is the initiator's Paillier public key bytes, or its
    /// signature key when the synergy runs unencrypted.
    pub fn derive(identity: &[u8], origin_ms: u64) -> Self {
        let mut h = Sha256::new();
        h.update(identity);
        h.update(origin_ms.to_be_bytes());
        Self(h.finalize().into())
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

/// A peer's network address together with its signing key.
#[derive(Clone)]
pub struct Identity {
    pub address: PeerAddress,
    pub signing_key: SigningKey,
}

impl Identity {
    pub fn new(address: PeerAddress, signing_key: SigningKey) -> Self {
        Self {
            address,
            signing_key,
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing_key.verifying_key()
    }
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

/// The running sum carried by an envelope.
#[derive(Debug, Clone, PartialEq)]
pub enum Accumulated {
    Encrypted(PackedCiphertext),
    /// Unencrypted sum, used by the plaintext pipeline that large
    /// simulations run for speed.
    Plaintext(Vec<f64>),
}

impl Accumulated {
    pub fn weight_count(&self) -> usize {
        match self {
            Self::Encrypted(c) => c.weight_count(),
            Self::Plaintext(v) => v.len(),
        }
    }

    fn seal<R: RngCore + CryptoRng>(
        pk: Option<&PublicKey>,
        codec: &FixedPointCodec,
        weights: &[f64],
        rng: &mut R,
    ) -> Result<Self, EnvelopeError> {
        match pk {
            Some(pk) => {
                let slots = encode_weights(weights, codec, pk.n())?;
                Ok(Self::Encrypted(encrypt_packed(pk, &slots, codec, rng)?))
            }
            None => {
                // Same range rules as the encrypted path.
                for (i, &w) in weights.iter().enumerate() {
                    codec.encode_value(i, w)?;
                }
                Ok(Self::Plaintext(weights.to_vec()))
            }
        }
    }

    fn add(&self, pk: Option<&PublicKey>, other: &Self) -> Result<Self, EnvelopeError> {
        match (self, other, pk) {
            (Self::Encrypted(a), Self::Encrypted(b), Some(pk)) => {
                Ok(Self::Encrypted(homomorphic_add(pk, a, b)?))
            }
            (Self::Plaintext(a), Self::Plaintext(b), None) => {
                if a.len() != b.len() {
                    return Err(HeError::LengthMismatch {
                        expected: a.len(),
                        actual: b.len(),
                    }
                    .into());
                }
                Ok(Self::Plaintext(
                    a.iter().zip(b).map(|(x, y)| x + y).collect(),
                ))
            }
            _ => Err(EnvelopeError::ModeMismatch),
        }
    }

    fn write(&self, w: &mut Writer) {
        match self {
            Self::Encrypted(c) => w.u8(PAYLOAD_PACKED).bytes(&c.to_bytes()),
            Self::Plaintext(v) => w.u8(PAYLOAD_PLAIN).reals(v),
        };
    }

    fn read(r: &mut Reader<'_>) -> Result<Self, EnvelopeError> {
        match r.u8()? {
            PAYLOAD_PACKED => Ok(Self::Encrypted(PackedCiphertext::from_bytes(r.bytes()?)?)),
            PAYLOAD_PLAIN => Ok(Self::Plaintext(r.reals()?)),
            _ => Err(EnvelopeError::Malformed("unknown payload tag")),
        }
    }
}

/// Forward envelopes still collect contributions. A return envelope is on
/// its way back to the initiator and carries neither the key nor `S`.
#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Forward {
        /// `None` in the plaintext pipeline.
        initiator_pk: Option<PublicKey>,
        remaining: u32,
    },
    Return,
}

/// The signed synergy message.
#[derive(Debug, Clone, PartialEq)]
pub struct SynergyEnvelope {
    synergy_id: SynergyId,
    stage: Stage,
    accumulated: Accumulated,
    participants: Vec<PeerAddress>,
    timestamp_ms: u64,
    sender_key: VerifyingKey,
    signature: Signature,
}

fn placeholder_signature() -> Signature {
    Signature::from_bytes(&[0u8; 64])
}

fn check_participants(participants: &[PeerAddress]) -> Result<(), EnvelopeError> {
    if participants.is_empty() {
        return Err(EnvelopeError::Malformed("empty participant list"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for p in participants {
        if !seen.insert(*p) {
            return Err(EnvelopeError::DuplicateParticipant(*p));
        }
    }
    Ok(())
}

fn write_participants(w: &mut Writer, participants: &[PeerAddress]) {
    w.u32(participants.len() as u32);
    for p in participants {
        w.raw(&p.0);
    }
}

fn read_participants(r: &mut Reader<'_>) -> Result<Vec<PeerAddress>, EnvelopeError> {
    let count = r.count(16)?;
    (0..count).map(|_| Ok(PeerAddress(r.array()?))).collect()
}

fn read_verifying_key(r: &mut Reader<'_>) -> Result<VerifyingKey, EnvelopeError> {
    VerifyingKey::from_bytes(&r.array()?)
        .map_err(|_| EnvelopeError::Malformed("invalid signature key"))
}

/// Starts a synergy: seals the initiator's weights and signs the envelope.
///
/// `synergy_budget` is `S`, the number of further participants wanted.
/// Passing no public key selects the plaintext pipeline.
pub fn create_initial_envelope<R: RngCore + CryptoRng>(
    identity: &Identity,
    initiator_pk: Option<&PublicKey>,
    codec: &FixedPointCodec,
    weights: &[f64],
    synergy_budget: u32,
    now_ms: u64,
    rng: &mut R,
) -> Result<SynergyEnvelope, EnvelopeError> {
    if (synergy_budget as usize) + 1 < MIN_SYNERGY_SIZE {
        return Err(EnvelopeError::SynergyTooSmall {
            size: synergy_budget as usize + 1,
        });
    }
    let accumulated = Accumulated::seal(initiator_pk, codec, weights, rng)?;
    let id_bytes = match initiator_pk {
        Some(pk) => pk.to_bytes(),
        None => identity.verifying_key().to_bytes().to_vec(),
    };
    let mut env = SynergyEnvelope {
        synergy_id: SynergyId::derive(&id_bytes, now_ms),
        stage: Stage::Forward {
            initiator_pk: initiator_pk.cloned(),
            remaining: synergy_budget,
        },
        accumulated,
        participants: vec![identity.address],
        timestamp_ms: now_ms,
        sender_key: identity.verifying_key(),
        signature: placeholder_signature(),
    };
    env.sign(identity, now_ms);
    Ok(env)
}

/// Adds the caller's sealed weights, decrements `S`, appends the caller to
/// the participant list and re-signs. Reaching `S = 0` turns the envelope
/// into a return envelope addressed to the initiator.
pub fn accumulate_and_forward<R: RngCore + CryptoRng>(
    envelope: &SynergyEnvelope,
    identity: &Identity,
    codec: &FixedPointCodec,
    weights: &[f64],
    now_ms: u64,
    rng: &mut R,
) -> Result<SynergyEnvelope, EnvelopeError> {
    if !envelope.verify_signature() {
        return Err(EnvelopeError::BadSignature);
    }
    let Stage::Forward {
        initiator_pk,
        remaining,
    } = &envelope.stage
    else {
        return Err(EnvelopeError::Exhausted);
    };
    if *remaining == 0 {
        return Err(EnvelopeError::Exhausted);
    }
    if envelope.participants.contains(&identity.address) {
        return Err(EnvelopeError::DuplicateParticipant(identity.address));
    }
    if let Accumulated::Encrypted(c) = &envelope.accumulated {
        if c.codec() != CodecDescriptor::from(codec) {
            return Err(HeError::Mismatch.into());
        }
    }
    let mine = Accumulated::seal(initiator_pk.as_ref(), codec, weights, rng)?;
    let accumulated = envelope.accumulated.add(initiator_pk.as_ref(), &mine)?;
    let remaining = remaining - 1;
    let stage = if remaining == 0 {
        Stage::Return
    } else {
        Stage::Forward {
            initiator_pk: initiator_pk.clone(),
            remaining,
        }
    };
    let mut participants = envelope.participants.clone();
    participants.push(identity.address);
    let mut next = SynergyEnvelope {
        synergy_id: envelope.synergy_id,
        stage,
        accumulated,
        participants,
        timestamp_ms: now_ms,
        sender_key: identity.verifying_key(),
        signature: placeholder_signature(),
    };
    next.sign(identity, now_ms);
    Ok(next)
}

impl SynergyEnvelope {
    pub fn synergy_id(&self) -> SynergyId {
        self.synergy_id
    }

    pub fn stage(&self) -> &Stage {
        &self.stage
    }

    /// `S`, or `None` once the envelope is returning.
    pub fn remaining(&self) -> Option<u32> {
        match self.stage {
            Stage::Forward { remaining, .. } => Some(remaining),
            Stage::Return => None,
        }
    }

    pub fn initiator_pk(&self) -> Option<&PublicKey> {
        match &self.stage {
            Stage::Forward { initiator_pk, .. } => initiator_pk.as_ref(),
            Stage::Return => None,
        }
    }

    pub fn accumulated(&self) -> &Accumulated {
        &self.accumulated
    }

    pub fn participants(&self) -> &[PeerAddress] {
        &self.participants
    }

    pub fn initiator(&self) -> PeerAddress {
        self.participants[0]
    }

    /// The peer that signed this envelope.
    pub fn sender(&self) -> PeerAddress {
        *self
            .participants
            .last()
            .expect("participants are never empty")
    }

    pub fn timestamp_ms(&self) -> u64 {
        self.timestamp_ms
    }

    pub fn sender_key(&self) -> &VerifyingKey {
        &self.sender_key
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn is_encrypted(&self) -> bool {
        matches!(self.accumulated, Accumulated::Encrypted(_))
    }

    /// True once the envelope must be routed to the initiator.
    pub fn is_terminal(&self) -> bool {
        matches!(self.stage, Stage::Return)
    }

    /// Accepts timestamps within `window_ms` of `now_ms` in either direction.
    pub fn is_fresh(&self, now_ms: u64, window_ms: u64) -> bool {
        now_ms.saturating_sub(self.timestamp_ms) <= window_ms
            && self.timestamp_ms <= now_ms.saturating_add(window_ms)
    }

    pub fn verify_signature(&self) -> bool {
        verify_signature(&self.sender_key, &self.canonical_bytes(), &self.signature)
    }

    /// Fresh timestamp and signature, used when a hop retries.
    pub fn resign(&self, identity: &Identity, now_ms: u64) -> Result<Self, EnvelopeError> {
        if self.sender() != identity.address {
            return Err(EnvelopeError::NotSender);
        }
        let mut next = self.clone();
        next.sign(identity, now_ms);
        Ok(next)
    }

    /// Churn fallback: sends the partial sum straight back to the initiator.
    pub fn into_early_return(
        &self,
        identity: &Identity,
        now_ms: u64,
    ) -> Result<Self, EnvelopeError> {
        if self.is_terminal() {
            return Err(EnvelopeError::Exhausted);
        }
        if self.participants.len() < MIN_SYNERGY_SIZE {
            return Err(EnvelopeError::SynergyTooSmall {
                size: self.participants.len(),
            });
        }
        let mut next = self.resign(identity, now_ms)?;
        next.stage = Stage::Return;
        next.sign(identity, now_ms);
        Ok(next)
    }

    fn sign(&mut self, identity: &Identity, now_ms: u64) {
        self.timestamp_ms = now_ms;
        self.sender_key = identity.verifying_key();
        self.signature = sign_message(&identity.signing_key, &self.canonical_bytes());
    }

    /// The signed bytes: every field except the signature, in fixed order,
    /// integers big-endian, variable-length parts length-prefixed.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(ENVELOPE_MAGIC).u8(WIRE_VERSION);
        match &self.stage {
            Stage::Forward {
                initiator_pk,
                remaining,
            } => {
                w.u8(KIND_FORWARD).raw(&self.synergy_id.0).u32(*remaining);
                let pk = initiator_pk.as_ref().map(|pk| pk.to_bytes());
                w.bytes(pk.as_deref().unwrap_or_default());
            }
            Stage::Return => {
                w.u8(KIND_RETURN).raw(&self.synergy_id.0);
            }
        }
        self.accumulated.write(&mut w);
        write_participants(&mut w, &self.participants);
        w.u64(self.timestamp_ms).raw(self.sender_key.as_bytes());
        w.finish()
    }

    /// Canonical bytes followed by the 64-byte signature.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.canonical_bytes();
        out.extend_from_slice(&self.signature.to_bytes());
        out
    }

    /// Parses the wire form. Structure is validated, the signature is not.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != ENVELOPE_MAGIC {
            return Err(EnvelopeError::Malformed("bad magic"));
        }
        if r.u8()? != WIRE_VERSION {
            return Err(EnvelopeError::Malformed("unsupported version"));
        }
        let kind = r.u8()?;
        let synergy_id = SynergyId(r.array()?);
        let stage = match kind {
            KIND_FORWARD => {
                let remaining = r.u32()?;
                let pk = r.bytes()?;
                let initiator_pk = if pk.is_empty() {
                    None
                } else {
                    Some(PublicKey::from_bytes(pk)?)
                };
                Stage::Forward {
                    initiator_pk,
                    remaining,
                }
            }
            KIND_RETURN => Stage::Return,
            _ => return Err(EnvelopeError::Malformed("unknown envelope kind")),
        };
        let accumulated = Accumulated::read(&mut r)?;
        let participants = read_participants(&mut r)?;
        let timestamp_ms = r.u64()?;
        let sender_key = read_verifying_key(&mut r)?;
        let signature = Signature::from_bytes(&r.array()?);
        r.finish()?;
        check_participants(&participants)?;
        if let Stage::Forward { initiator_pk, .. } = &stage {
            if initiator_pk.is_some() != matches!(accumulated, Accumulated::Encrypted(_)) {
                return Err(EnvelopeError::ModeMismatch);
            }
        }
        Ok(Self {
            synergy_id,
            stage,
            accumulated,
            participants,
            timestamp_ms,
            sender_key,
            signature,
        })
    }
}

/// What lets participants check the broadcast aggregate.
#[derive(Debug, Clone, PartialEq)]
pub enum Evidence {
    /// The summed ciphertext, its claimed slot sums `Res` and a proof that
    /// they are its decryption.
    Decryption {
        initiator_pk: PublicKey,
        ciphertext: PackedCiphertext,
        sums: Vec<BigUint>,
        proof: DecryptionProof,
    },
    /// Plaintext pipeline: nothing to prove.
    Plaintext,
}

/// The initiator's broadcast of the averaged weights `Res / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalAggregateMessage {
    synergy_id: SynergyId,
    aggregate: Vec<f64>,
    evidence: Evidence,
    participants: Vec<PeerAddress>,
    timestamp_ms: u64,
    initiator_key: VerifyingKey,
    signature: Signature,
}

/// Decrypts a terminal envelope, divides by `N = |L|`, proves the
/// decryption and signs the result.
pub fn finalize_aggregate(
    envelope: &SynergyEnvelope,
    identity: &Identity,
    keypair: Option<&KeyPair>,
    codec: &FixedPointCodec,
    now_ms: u64,
) -> Result<FinalAggregateMessage, EnvelopeError> {
    if !envelope.verify_signature() {
        return Err(EnvelopeError::BadSignature);
    }
    if !envelope.is_terminal() {
        return Err(EnvelopeError::NotTerminal);
    }
    if envelope.initiator() != identity.address {
        return Err(EnvelopeError::NotInitiator);
    }
    let n_peers = envelope.participants.len();
    if n_peers < MIN_SYNERGY_SIZE {
        return Err(EnvelopeError::SynergyTooSmall { size: n_peers });
    }
    let (aggregate, evidence) = match &envelope.accumulated {
        Accumulated::Encrypted(c) => {
            let kp = keypair.ok_or(EnvelopeError::MissingKey)?;
            if c.codec() != CodecDescriptor::from(codec) {
                return Err(HeError::Mismatch.into());
            }
            let sums = decrypt_packed(&kp.secret, c)?;
            let aggregate = decode_weights(&sums, codec, kp.public.n(), n_peers as u64)?;
            let proof = prove_decryption(&kp.secret, c, &sums)?;
            let evidence = Evidence::Decryption {
                initiator_pk: kp.public.clone(),
                ciphertext: c.clone(),
                sums,
                proof,
            };
            (aggregate, evidence)
        }
        Accumulated::Plaintext(sum) => {
            let n = n_peers as f64;
            (sum.iter().map(|s| s / n).collect(), Evidence::Plaintext)
        }
    };
    let mut msg = FinalAggregateMessage {
        synergy_id: envelope.synergy_id,
        aggregate,
        evidence,
        participants: envelope.participants.clone(),
        timestamp_ms: now_ms,
        initiator_key: identity.verifying_key(),
        signature: placeholder_signature(),
    };
    msg.signature = sign_message(&identity.signing_key, &msg.canonical_bytes());
    Ok(msg)
}

impl FinalAggregateMessage {
    pub fn synergy_id(&self) -> SynergyId {
        self.synergy_id
    }

    pub fn aggregate(&self) -> &[f64] {
        &self.aggregate
    }

    pub fn evidence(&self) -> &Evidence {
        &self.evidence
    }

    pub fn participants(&self) -> &[PeerAddress] {
        &self.participants
    }

    /// `N`.
    pub fn participant_count(&self) -> usize {
        self.participants.len()
    }

    pub fn initiator(&self) -> PeerAddress {
        self.participants[0]
    }

    pub fn timestamp_ms(&self) -> u64 {
        self.timestamp_ms
    }

    pub fn initiator_key(&self) -> &VerifyingKey {
        &self.initiator_key
    }

    pub fn initiator_pk(&self) -> Option<&PublicKey> {
        match &self.evidence {
            Evidence::Decryption { initiator_pk, .. } => Some(initiator_pk),
            Evidence::Plaintext => None,
        }
    }

    pub fn verify_signature(&self) -> bool {
        verify_signature(
            &self.initiator_key,
            &self.canonical_bytes(),
            &self.signature,
        )
    }

    /// Full receiver-side check: signature, synergy size, decryption proof,
    /// and that the aggregate is exactly the decoded mean of the proven sums.
    pub fn verify(&self, codec: &FixedPointCodec) -> Result<(), EnvelopeError> {
        if !self.verify_signature() {
            return Err(EnvelopeError::BadSignature);
        }
        check_participants(&self.participants)?;
        let n_peers = self.participants.len();
        if n_peers < MIN_SYNERGY_SIZE {
            return Err(EnvelopeError::SynergyTooSmall { size: n_peers });
        }
        match &self.evidence {
            Evidence::Decryption {
                initiator_pk,
                ciphertext,
                sums,
                proof,
            } => {
                if ciphertext.codec() != CodecDescriptor::from(codec) {
                    return Err(HeError::Mismatch.into());
                }
                if !verify_decryption(initiator_pk, ciphertext, sums, proof) {
                    return Err(EnvelopeError::InvalidProof);
                }
                let expected = decode_weights(sums, codec, initiator_pk.n(), n_peers as u64)?;
                let same = expected.len() == self.aggregate.len()
                    && expected
                        .iter()
                        .zip(&self.aggregate)
                        .all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    return Err(EnvelopeError::AggregateMismatch);
                }
            }
            Evidence::Plaintext => {
                if self.aggregate.iter().any(|v| !v.is_finite()) {
                    return Err(EnvelopeError::AggregateMismatch);
                }
            }
        }
        Ok(())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(FINAL_MAGIC)
            .u8(WIRE_VERSION)
            .raw(&self.synergy_id.0)
            .reals(&self.aggregate);
        match &self.evidence {
            Evidence::Decryption {
                initiator_pk,
                ciphertext,
                sums,
                proof,
            } => {
                w.u8(EVIDENCE_DECRYPTION)
                    .bytes(&initiator_pk.to_bytes())
                    .bytes(&ciphertext.to_bytes())
                    .u32(sums.len() as u32);
                for s in sums {
                    w.bytes(&s.to_bytes_be());
                }
                w.bytes(&proof.to_bytes());
            }
            Evidence::Plaintext => {
                w.u8(EVIDENCE_PLAIN);
            }
        }
        write_participants(&mut w, &self.participants);
        w.u64(self.timestamp_ms).raw(self.initiator_key.as_bytes());
        w.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.canonical_bytes();
        out.extend_from_slice(&self.signature.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvelopeError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != FINAL_MAGIC {
            return Err(EnvelopeError::Malformed("bad magic"));
        }
        if r.u8()? != WIRE_VERSION {
            return Err(EnvelopeError::Malformed("unsupported version"));
        }
        let synergy_id = SynergyId(r.array()?);
        let aggregate = r.reals()?;
        let evidence = match r.u8()? {
            EVIDENCE_DECRYPTION => {
                let initiator_pk = PublicKey::from_bytes(r.bytes()?)?;
                let ciphertext = PackedCiphertext::from_bytes(r.bytes()?)?;
                let count = r.count(4)?;
                let sums = (0..count)
                    .map(|_| Ok(BigUint::from_bytes_be(r.bytes()?)))
                    .collect::<Result<_, EnvelopeError>>()?;
                let proof = DecryptionProof::from_bytes(r.bytes()?)?;
                Evidence::Decryption {
                    initiator_pk,
                    ciphertext,
                    sums,
                    proof,
                }
            }
            EVIDENCE_PLAIN => Evidence::Plaintext,
            _ => return Err(EnvelopeError::Malformed("unknown evidence tag")),
        };
        let participants = read_participants(&mut r)?;
        let timestamp_ms = r.u64()?;
        let initiator_key = read_verifying_key(&mut r)?;
        let signature = Signature::from_bytes(&r.array()?);
        r.finish()?;
        check_participants(&participants)?;
        Ok(Self {
            synergy_id,
            aggregate,
            evidence,
            participants,
            timestamp_ms,
            initiator_key,
            signature,
        })
    }
}

#[cfg(test)]
mod tests;
