//! Per-peer protocol state machine.
//!
//! A peer reacts to four inputs: a discovery tick that may start a synergy,
//! an incoming envelope, a beacon from the next hop, and timer expiry. Each
//! handler returns [`Effects`]: messages to send, protocol events for the
//! trace, and times at which the peer wants `on_timer` to run.

mod model;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::{
    accumulate_and_forward, create_initial_envelope, finalize_aggregate, EnvelopeError,
    FinalAggregateMessage, Identity, PeerAddress, SynergyEnvelope, SynergyId, MIN_SYNERGY_SIZE,
};
use crate::he::{FixedPointCodec, KeyPair, PublicKey, VerifyingKey};

pub use model::{FixedWeights, LocalModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("hop timeout must be positive")]
    ZeroTimeout,
    #[error("minimum synergy size must be at least {MIN_SYNERGY_SIZE}")]
    MinSynergySize,
    #[error("weight clip bound must be positive and finite")]
    WeightClip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    /// `t_p`: how long a forwarding peer waits for the next hop's beacon.
    pub hop_timeout_ms: u64,
    /// `R`: re-forward attempts after the first one.
    pub max_retries: u32,
    /// Envelopes whose timestamp is further than this from local time are
    /// dropped as replays.
    pub freshness_window_ms: u64,
    pub min_synergy_size: usize,
    /// Contributed weights are clipped to `[-clip, clip]`.
    pub weight_clip: f64,
    /// How long a participant remembers a synergy it joined.
    pub retention_ms: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            hop_timeout_ms: 1_000,
            max_retries: 3,
            freshness_window_ms: 60_000,
            min_synergy_size: MIN_SYNERGY_SIZE,
            weight_clip: 1e3,
            retention_ms: 120_000,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.hop_timeout_ms == 0 {
            return Err(ConfigError::ZeroTimeout);
        }
        if self.min_synergy_size < MIN_SYNERGY_SIZE {
            return Err(ConfigError::MinSynergySize);
        }
        if !(self.weight_clip.is_finite() && self.weight_clip > 0.0) {
            return Err(ConfigError::WeightClip);
        }
        Ok(())
    }

    /// `t = t_p × (S − 1)`.
    pub fn initiator_timeout_ms(&self, budget: u32) -> u64 {
        self.hop_timeout_ms * u64::from(budget.saturating_sub(1))
    }
}

#[derive(Debug, Clone)]
pub enum Message {
    Envelope(SynergyEnvelope),
    /// "I forwarded your envelope": discharges the receiver's hop timeout.
    Beacon {
        synergy: SynergyId,
    },
    FinalAggregate(Arc<FinalAggregateMessage>),
}

impl Message {
    pub fn synergy(&self) -> SynergyId {
        match self {
            Self::Envelope(e) => e.synergy_id(),
            Self::Beacon { synergy } => *synergy,
            Self::FinalAggregate(m) => m.synergy_id(),
        }
    }

    pub fn kind(&self) -> MessageKind {
        match self {
            Self::Envelope(_) => MessageKind::Envelope,
            Self::Beacon { .. } => MessageKind::Beacon,
            Self::FinalAggregate(_) => MessageKind::FinalAggregate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Envelope,
    Beacon,
    FinalAggregate,
}

#[derive(Debug, Clone)]
pub struct Outbound {
    pub to: PeerAddress,
    pub message: Message,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BadSignature,
    Stale,
    SenderMismatch,
    KeyMismatch,
    Duplicate,
    UnknownSynergy,
    NotInitiator,
    PastDeadline,
    InvalidEnvelope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    /// The initiator deadline `t_p × (S − 1)` passed.
    Deadline,
    /// The initiator's own first hop never got a beacon.
    RetriesExhausted,
    /// Local encoding or decryption failed.
    Crypto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalFailureReason {
    RetriesExhausted,
    NoNeighbours,
    Crypto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateRejection {
    NotJoined,
    NotInSynergy,
    WrongInitiator,
    KeyMismatch,
    InvalidProof,
    BadSignature,
    Malformed,
    LengthMismatch,
}

/// One line of the protocol trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ProtocolEvent {
    Initiated {
        synergy: SynergyId,
        budget: u32,
        deadline_ms: u64,
    },
    /// This peer's weights entered the synergy's running sum.
    Contributed {
        synergy: SynergyId,
    },
    Forwarded {
        synergy: SynergyId,
        to: PeerAddress,
        attempt: u32,
    },
    /// Normal countdown reached zero; the envelope goes home.
    Returned {
        synergy: SynergyId,
        to: PeerAddress,
        participants: usize,
    },
    EarlyReturn {
        synergy: SynergyId,
        to: PeerAddress,
        participants: usize,
    },
    BeaconSent {
        synergy: SynergyId,
        to: PeerAddress,
    },
    BeaconReceived {
        synergy: SynergyId,
        from: PeerAddress,
    },
    LocalFailure {
        synergy: SynergyId,
        reason: LocalFailureReason,
    },
    Dropped {
        synergy: SynergyId,
        reason: DropReason,
    },
    Completed {
        synergy: SynergyId,
        participants: Vec<PeerAddress>,
    },
    Failed {
        synergy: SynergyId,
        reason: FailReason,
    },
    AggregateApplied {
        synergy: SynergyId,
        accepted: bool,
        metric_before: Option<f64>,
        metric_candidate: Option<f64>,
    },
    AggregateRejected {
        synergy: SynergyId,
        reason: AggregateRejection,
        suspect: PeerAddress,
    },
}

impl ProtocolEvent {
    pub fn synergy(&self) -> SynergyId {
        match self {
            Self::Initiated { synergy, .. }
            | Self::Contributed { synergy }
            | Self::Forwarded { synergy, .. }
            | Self::Returned { synergy, .. }
            | Self::EarlyReturn { synergy, .. }
            | Self::BeaconSent { synergy, .. }
            | Self::BeaconReceived { synergy, .. }
            | Self::LocalFailure { synergy, .. }
            | Self::Dropped { synergy, .. }
            | Self::Completed { synergy, .. }
            | Self::Failed { synergy, .. }
            | Self::AggregateApplied { synergy, .. }
            | Self::AggregateRejected { synergy, .. } => *synergy,
        }
    }
}

#[derive(Debug, Default)]
pub struct Effects {
    pub outbound: Vec<Outbound>,
    pub events: Vec<ProtocolEvent>,
    /// Times at which `on_timer` should run.
    pub wakeups: Vec<u64>,
}

impl Effects {
    fn send(&mut self, to: PeerAddress, message: Message) {
        self.outbound.push(Outbound { to, message });
    }

    fn event(&mut self, e: ProtocolEvent) {
        self.events.push(e);
    }

    pub fn is_empty(&self) -> bool {
        self.outbound.is_empty() && self.events.is_empty() && self.wakeups.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Participant,
}

/// Per-synergy hop state held by the peer that last forwarded it.
#[derive(Debug, Clone)]
pub struct SynergyBookkeeping {
    pub synergy_id: SynergyId,
    pub role: Role,
    /// The envelope as forwarded, retained so a retry can re-send it.
    pub envelope: SynergyEnvelope,
    pub forwarded_to: Option<PeerAddress>,
    pub tried: BTreeSet<PeerAddress>,
    pub beacon_deadline: Option<u64>,
    pub retries_used: u32,
    /// Initiator only: `start + t_p × (S − 1)`.
    pub initiator_deadline: Option<u64>,
}

#[derive(Debug, Clone)]
struct Joined {
    initiator: PeerAddress,
    initiator_pk: Option<PublicKey>,
    expires_ms: u64,
    /// An aggregate was already applied; the entry stays so that copies
    /// arriving over a stray branch are still recognised as duplicates.
    settled: bool,
}

pub struct PeerState<M> {
    identity: Identity,
    keys: Option<KeyPair>,
    codec: FixedPointCodec,
    config: ProtocolConfig,
    model: M,
    /// Routing and model decisions.
    rng: ChaCha20Rng,
    /// Encryption randomness, kept apart so that encrypted and plaintext
    /// runs make identical routing choices.
    crypto_rng: ChaCha20Rng,
    active: BTreeMap<SynergyId, SynergyBookkeeping>,
    joined: BTreeMap<SynergyId, Joined>,
    pinned: BTreeMap<PeerAddress, VerifyingKey>,
}

impl<M: LocalModel> PeerState<M> {
    /// `keys = None` runs the plaintext pipeline.
    pub fn new(
        identity: Identity,
        keys: Option<KeyPair>,
        codec: FixedPointCodec,
        config: ProtocolConfig,
        model: M,
        seed: u64,
    ) -> Self {
        Self {
            identity,
            keys,
            codec,
            config,
            model,
            rng: ChaCha20Rng::seed_from_u64(seed),
            crypto_rng: ChaCha20Rng::seed_from_u64(crate::seed::derive_seed(seed, &[0xC0])),
            active: BTreeMap::new(),
            joined: BTreeMap::new(),
            pinned: BTreeMap::new(),
        }
    }

    pub fn address(&self) -> PeerAddress {
        self.identity.address
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut M {
        &mut self.model
    }

    pub fn active_synergies(&self) -> &BTreeMap<SynergyId, SynergyBookkeeping> {
        &self.active
    }

    pub fn pinned_key(&self, peer: &PeerAddress) -> Option<&VerifyingKey> {
        self.pinned.get(peer)
    }

    /// Starts a synergy of `synergy_size` peers (initiator included) by
    /// sending the initial envelope to a random neighbour.
    pub fn on_discover(
        &mut self,
        neighbors: &[PeerAddress],
        synergy_size: usize,
        now: u64,
    ) -> Effects {
        let mut fx = Effects::default();
        let me = self.identity.address;
        let candidates: Vec<PeerAddress> = neighbors.iter().copied().filter(|&p| p != me).collect();
        let Some(&first) = candidates.choose(&mut self.rng) else {
            return fx;
        };
        let budget = synergy_size.max(self.config.min_synergy_size) as u32 - 1;
        let weights = self.contribution();
        let env = match create_initial_envelope(
            &self.identity,
            self.keys.as_ref().map(|k| &k.public),
            &self.codec,
            &weights,
            budget,
            now,
            &mut self.crypto_rng,
        ) {
            Ok(env) => env,
            Err(e) => {
                log::warn!("peer {me}: cannot start synergy: {e}");
                return fx;
            }
        };
        let id = env.synergy_id();
        if self.active.contains_key(&id) || self.joined.contains_key(&id) {
            return fx;
        }
        let deadline = now + self.config.initiator_timeout_ms(budget);
        let beacon_deadline = now + self.config.hop_timeout_ms;
        fx.event(ProtocolEvent::Initiated {
            synergy: id,
            budget,
            deadline_ms: deadline,
        });
        fx.event(ProtocolEvent::Contributed { synergy: id });
        fx.event(ProtocolEvent::Forwarded {
            synergy: id,
            to: first,
            attempt: 1,
        });
        fx.send(first, Message::Envelope(env.clone()));
        fx.wakeups.extend([beacon_deadline, deadline]);
        self.remember(id, me, self.keys.as_ref().map(|k| k.public.clone()), now);
        self.active.insert(
            id,
            SynergyBookkeeping {
                synergy_id: id,
                role: Role::Initiator,
                envelope: env,
                forwarded_to: Some(first),
                tried: BTreeSet::from([first]),
                beacon_deadline: Some(beacon_deadline),
                retries_used: 0,
                initiator_deadline: Some(deadline),
            },
        );
        fx
    }

    pub fn on_envelope(
        &mut self,
        env: SynergyEnvelope,
        from: PeerAddress,
        neighbors: &[PeerAddress],
        now: u64,
    ) -> Effects {
        let mut fx = Effects::default();
        let id = env.synergy_id();
        let drop = |fx: &mut Effects, reason| {
            fx.event(ProtocolEvent::Dropped {
                synergy: id,
                reason,
            })
        };
        if env.sender() != from {
            drop(&mut fx, DropReason::SenderMismatch);
            return fx;
        }
        if !env.verify_signature() {
            drop(&mut fx, DropReason::BadSignature);
            return fx;
        }
        if !env.is_fresh(now, self.config.freshness_window_ms) {
            drop(&mut fx, DropReason::Stale);
            return fx;
        }
        if !self.pin(from, env.sender_key()) {
            drop(&mut fx, DropReason::KeyMismatch);
            return fx;
        }
        if env.is_terminal() {
            self.handle_return(env, now, &mut fx);
            return fx;
        }

        let me = self.identity.address;
        if env.participants().contains(&me) || self.joined.contains_key(&id) {
            drop(&mut fx, DropReason::Duplicate);
            return fx;
        }
        let weights = self.contribution();
        let next = match accumulate_and_forward(
            &env,
            &self.identity,
            &self.codec,
            &weights,
            now,
            &mut self.crypto_rng,
        ) {
            Ok(next) => next,
            Err(e) => {
                log::debug!("peer {me}: dropping envelope {}: {e}", id.short());
                drop(&mut fx, DropReason::InvalidEnvelope);
                return fx;
            }
        };
        fx.event(ProtocolEvent::Contributed { synergy: id });
        self.remember(id, env.initiator(), env.initiator_pk().cloned(), now);

        if next.is_terminal() {
            let to = next.initiator();
            fx.event(ProtocolEvent::Returned {
                synergy: id,
                to,
                participants: next.participants().len(),
            });
            fx.send(to, Message::Envelope(next));
            self.beacon(from, id, &mut fx);
            return fx;
        }

        let tried = BTreeSet::new();
        match self.pick_next(neighbors, &next, &tried) {
            Some(to) => {
                let beacon_deadline = now + self.config.hop_timeout_ms;
                fx.event(ProtocolEvent::Forwarded {
                    synergy: id,
                    to,
                    attempt: 1,
                });
                fx.send(to, Message::Envelope(next.clone()));
                fx.wakeups.push(beacon_deadline);
                self.beacon(from, id, &mut fx);
                self.active.insert(
                    id,
                    SynergyBookkeeping {
                        synergy_id: id,
                        role: Role::Participant,
                        envelope: next,
                        forwarded_to: Some(to),
                        tried: BTreeSet::from([to]),
                        beacon_deadline: Some(beacon_deadline),
                        retries_used: 0,
                        initiator_deadline: None,
                    },
                );
            }
            None => {
                // No one left to ask: fall back as if retries were used up.
                // Only a successful early return discharges the sender.
                if self.fall_back(&next, now, LocalFailureReason::NoNeighbours, &mut fx) {
                    self.beacon(from, id, &mut fx);
                }
            }
        }
        fx
    }

    pub fn on_beacon(&mut self, synergy: SynergyId, from: PeerAddress, _now: u64) -> Effects {
        let mut fx = Effects::default();
        let Some(book) = self.active.get_mut(&synergy) else {
            return fx;
        };
        if book.beacon_deadline.is_none() || book.forwarded_to != Some(from) {
            return fx;
        }
        book.beacon_deadline = None;
        fx.event(ProtocolEvent::BeaconReceived { synergy, from });
        if book.role == Role::Participant {
            self.active.remove(&synergy);
        }
        fx
    }

    pub fn on_timer(&mut self, neighbors: &[PeerAddress], now: u64) -> Effects {
        let mut fx = Effects::default();
        self.joined.retain(|_, j| j.expires_ms > now);
        let ids: Vec<SynergyId> = self.active.keys().copied().collect();
        for id in ids {
            let book = &self.active[&id];
            if book.initiator_deadline.is_some_and(|d| now >= d) {
                self.active.remove(&id);
                fx.event(ProtocolEvent::Failed {
                    synergy: id,
                    reason: FailReason::Deadline,
                });
                continue;
            }
            if !book.beacon_deadline.is_some_and(|d| now >= d) {
                continue;
            }
            let mut book = self.active.remove(&id).expect("present");
            book.retries_used += 1;
            let next = if book.retries_used <= self.config.max_retries {
                self.pick_next(neighbors, &book.envelope, &book.tried)
            } else {
                None
            };
            match next {
                Some(to) => {
                    let env = match book.envelope.resign(&self.identity, now) {
                        Ok(env) => env,
                        Err(e) => {
                            log::error!("peer {}: cannot re-sign: {e}", self.identity.address);
                            continue;
                        }
                    };
                    let beacon_deadline = now + self.config.hop_timeout_ms;
                    fx.event(ProtocolEvent::Forwarded {
                        synergy: id,
                        to,
                        attempt: book.retries_used + 1,
                    });
                    fx.send(to, Message::Envelope(env.clone()));
                    fx.wakeups.push(beacon_deadline);
                    book.envelope = env;
                    book.forwarded_to = Some(to);
                    book.tried.insert(to);
                    book.beacon_deadline = Some(beacon_deadline);
                    self.active.insert(id, book);
                }
                None if book.role == Role::Initiator => {
                    fx.event(ProtocolEvent::Failed {
                        synergy: id,
                        reason: FailReason::RetriesExhausted,
                    });
                }
                None => {
                    self.fall_back(
                        &book.envelope,
                        now,
                        LocalFailureReason::RetriesExhausted,
                        &mut fx,
                    );
                }
            }
        }
        fx
    }

    /// Verifies a broadcast aggregate and applies it under the acceptance
    /// rule: keep it iff the local metric does not decrease.
    pub fn on_final_aggregate(
        &mut self,
        msg: &FinalAggregateMessage,
        from: PeerAddress,
        _now: u64,
    ) -> Effects {
        let mut fx = Effects::default();
        let id = msg.synergy_id();
        let initiator = msg.initiator();
        let reject = |fx: &mut Effects, reason| {
            fx.event(ProtocolEvent::AggregateRejected {
                synergy: id,
                reason,
                suspect: initiator,
            })
        };
        let Some(joined) = self.joined.get(&id).filter(|j| !j.settled) else {
            reject(&mut fx, AggregateRejection::NotJoined);
            return fx;
        };
        if from != initiator || joined.initiator != initiator {
            reject(&mut fx, AggregateRejection::WrongInitiator);
            return fx;
        }
        if !msg.participants().contains(&self.identity.address) {
            reject(&mut fx, AggregateRejection::NotInSynergy);
            return fx;
        }
        if joined.initiator_pk.as_ref() != msg.initiator_pk() {
            reject(&mut fx, AggregateRejection::KeyMismatch);
            return fx;
        }
        if !self.pin(initiator, msg.initiator_key()) {
            reject(&mut fx, AggregateRejection::KeyMismatch);
            return fx;
        }
        if let Err(e) = msg.verify(&self.codec) {
            let reason = match e {
                EnvelopeError::BadSignature => AggregateRejection::BadSignature,
                EnvelopeError::InvalidProof | EnvelopeError::AggregateMismatch => {
                    AggregateRejection::InvalidProof
                }
                _ => AggregateRejection::Malformed,
            };
            log::warn!(
                "peer {}: rejecting aggregate {}: {e}",
                self.identity.address,
                id.short()
            );
            reject(&mut fx, reason);
            return fx;
        }
        if let Some(j) = self.joined.get_mut(&id) {
            j.settled = true;
        }
        self.apply_aggregate(id, msg.aggregate(), &mut fx);
        fx
    }

    fn handle_return(&mut self, env: SynergyEnvelope, now: u64, fx: &mut Effects) {
        let id = env.synergy_id();
        let me = self.identity.address;
        if env.initiator() != me {
            fx.event(ProtocolEvent::Dropped {
                synergy: id,
                reason: DropReason::NotInitiator,
            });
            return;
        }
        let Some(book) = self.active.get(&id).filter(|b| b.role == Role::Initiator) else {
            fx.event(ProtocolEvent::Dropped {
                synergy: id,
                reason: DropReason::UnknownSynergy,
            });
            return;
        };
        if book.initiator_deadline.is_some_and(|d| now >= d) {
            fx.event(ProtocolEvent::Dropped {
                synergy: id,
                reason: DropReason::PastDeadline,
            });
            return;
        }
        let msg =
            match finalize_aggregate(&env, &self.identity, self.keys.as_ref(), &self.codec, now) {
                Ok(msg) => msg,
                Err(e) => {
                    log::warn!("peer {me}: cannot finalize {}: {e}", id.short());
                    fx.event(ProtocolEvent::Dropped {
                        synergy: id,
                        reason: DropReason::InvalidEnvelope,
                    });
                    return;
                }
            };
        self.active.remove(&id);
        self.joined.remove(&id);
        fx.event(ProtocolEvent::Completed {
            synergy: id,
            participants: msg.participants().to_vec(),
        });
        let msg = Arc::new(msg);
        for &p in msg.participants().iter().filter(|&&p| p != me) {
            fx.send(p, Message::FinalAggregate(Arc::clone(&msg)));
        }
        self.apply_aggregate(id, msg.aggregate(), fx);
    }

    fn apply_aggregate(&mut self, id: SynergyId, aggregate: &[f64], fx: &mut Effects) {
        let previous = self.model.weights();
        if previous.len() != aggregate.len() {
            fx.event(ProtocolEvent::AggregateRejected {
                synergy: id,
                reason: AggregateRejection::LengthMismatch,
                suspect: self.identity.address,
            });
            return;
        }
        let before = self.model.local_metric();
        self.model.replace_weights(aggregate);
        let candidate = self.model.local_metric();
        let accepted = match (before, candidate) {
            (Some(b), Some(c)) => c >= b,
            _ => true,
        };
        if !accepted {
            self.model.replace_weights(&previous);
        }
        fx.event(ProtocolEvent::AggregateApplied {
            synergy: id,
            accepted,
            metric_before: before,
            metric_candidate: candidate,
        });
    }

    /// Early return if the chain is already long enough, local failure
    /// otherwise. Returns whether the envelope went back to the initiator.
    fn fall_back(
        &mut self,
        env: &SynergyEnvelope,
        now: u64,
        reason: LocalFailureReason,
        fx: &mut Effects,
    ) -> bool {
        let id = env.synergy_id();
        if env.participants().len() < self.config.min_synergy_size {
            fx.event(ProtocolEvent::LocalFailure {
                synergy: id,
                reason,
            });
            return false;
        }
        match env.into_early_return(&self.identity, now) {
            Ok(back) => {
                let to = back.initiator();
                fx.event(ProtocolEvent::EarlyReturn {
                    synergy: id,
                    to,
                    participants: back.participants().len(),
                });
                fx.send(to, Message::Envelope(back));
                true
            }
            Err(e) => {
                log::error!("peer {}: early return failed: {e}", self.identity.address);
                fx.event(ProtocolEvent::LocalFailure {
                    synergy: id,
                    reason: LocalFailureReason::Crypto,
                });
                false
            }
        }
    }

    fn beacon(&self, to: PeerAddress, synergy: SynergyId, fx: &mut Effects) {
        fx.event(ProtocolEvent::BeaconSent { synergy, to });
        fx.send(to, Message::Beacon { synergy });
    }

    /// Uniform choice among neighbours that are neither in `L` nor already
    /// tried for this hop.
    fn pick_next(
        &mut self,
        neighbors: &[PeerAddress],
        env: &SynergyEnvelope,
        tried: &BTreeSet<PeerAddress>,
    ) -> Option<PeerAddress> {
        let me = self.identity.address;
        let candidates: Vec<PeerAddress> = neighbors
            .iter()
            .copied()
            .filter(|p| *p != me && !tried.contains(p) && !env.participants().contains(p))
            .collect();
        candidates.choose(&mut self.rng).copied()
    }

    /// Trust on first use: the first key seen for an address sticks.
    fn pin(&mut self, peer: PeerAddress, key: &VerifyingKey) -> bool {
        *self.pinned.entry(peer).or_insert(*key) == *key
    }

    fn remember(&mut self, id: SynergyId, initiator: PeerAddress, pk: Option<PublicKey>, now: u64) {
        self.joined.retain(|_, j| j.expires_ms > now);
        self.joined.insert(
            id,
            Joined {
                initiator,
                initiator_pk: pk,
                expires_ms: now + self.config.retention_ms,
                settled: false,
            },
        );
    }

    fn contribution(&mut self) -> Vec<f64> {
        let clip = self.config.weight_clip;
        let mut w = self.model.contribution(&mut self.rng);
        let mut clipped = 0usize;
        for v in &mut w {
            if v.abs() > clip {
                *v = v.clamp(-clip, clip);
                clipped += 1;
            }
        }
        if clipped > 0 {
            log::warn!(
                "peer {}: clipped {clipped} weights to ±{clip}",
                self.identity.address
            );
        }
        w
    }
}
