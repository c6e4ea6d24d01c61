use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::churn::ChurnSchedule;
use super::queue::EventQueue;
use super::trace::{NetEvent, TraceEvent, TraceRecord};
use super::SimError;
use crate::envelope::{FinalAggregateMessage, PeerAddress, SynergyId};
use crate::peer::{Effects, LocalModel, Message, PeerState, ProtocolEvent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Latency {
    Fixed { ms: u64 },
    Uniform { min_ms: u64, max_ms: u64 },
}

impl Default for Latency {
    fn default() -> Self {
        Self::Uniform {
            min_ms: 5,
            max_ms: 50,
        }
    }
}

impl Latency {
    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match *self {
            Self::Fixed { ms } => ms,
            Self::Uniform { min_ms, max_ms } => rng.gen_range(min_ms..=max_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Independent loss probability applied to every message.
    pub drop_prob: f64,
    pub latency: Latency,
    /// Discovery refresh period. `0` means peers always see the live set of
    /// present peers; otherwise they see the set as of the last refresh, so
    /// peers that left since then still look reachable.
    pub discovery_snapshot_ms: u64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            drop_prob: 0.0,
            latency: Latency::default(),
            discovery_snapshot_ms: 0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(SimError::InvalidConfig(
                "drop probability must be in [0, 1]".into(),
            ));
        }
        if let Latency::Uniform { min_ms, max_ms } = self.latency {
            if min_ms > max_ms {
                return Err(SimError::InvalidConfig("latency min exceeds max".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetStats {
    pub initiated: usize,
    pub completed: usize,
    pub failed: usize,
    pub sent: usize,
    pub delivered: usize,
    pub dropped: usize,
    pub lost: usize,
}

impl NetStats {
    /// Initiated synergies that have not yet completed or failed.
    pub fn in_flight(&self) -> usize {
        self.initiated - self.completed - self.failed
    }
}

/// Envelope and aggregate deliveries for one synergy against the bound
/// `S + R·S + |L|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageAudit {
    pub synergy: SynergyId,
    pub delivered: usize,
    pub bound: usize,
}

enum SimEvent {
    Initiate {
        peer: usize,
        size: usize,
    },
    Deliver {
        from: usize,
        to: usize,
        message: Message,
    },
    Timer {
        peer: usize,
    },
}

struct SynergyAudit {
    budget: usize,
    participants: Option<usize>,
    delivered: usize,
}

/// Deterministic discrete-event network of peers.
pub struct Network<M> {
    peers: Vec<PeerState<M>>,
    addresses: Vec<PeerAddress>,
    config: NetConfig,
    max_retries: usize,
    churn: ChurnSchedule,
    queue: EventQueue<SimEvent>,
    now: u64,
    rng: ChaCha20Rng,
    timers: BTreeSet<(u64, usize)>,
    view: Option<(usize, Arc<Vec<PeerAddress>>)>,
    records: Vec<TraceRecord>,
    stats: NetStats,
    audit: BTreeMap<SynergyId, SynergyAudit>,
    finals: Option<Vec<Arc<FinalAggregateMessage>>>,
}

impl<M: LocalModel> Network<M> {
    /// Peer `i` must have address `PeerAddress::from_index(i)`.
    pub fn new(
        peers: Vec<PeerState<M>>,
        config: NetConfig,
        churn: ChurnSchedule,
        seed: u64,
    ) -> Result<Self, SimError> {
        config.validate()?;
        if churn.num_peers() != peers.len() {
            return Err(SimError::InvalidConfig(
                "churn schedule size differs from peer count".into(),
            ));
        }
        for (i, p) in peers.iter().enumerate() {
            if p.address() != PeerAddress::from_index(i as u64) {
                return Err(SimError::InvalidConfig(format!(
                    "peer {i} has a foreign address"
                )));
            }
        }
        let max_retries = peers.first().map_or(0, |p| p.config().max_retries as usize);
        Ok(Self {
            addresses: peers.iter().map(|p| p.address()).collect(),
            peers,
            config,
            max_retries,
            churn,
            queue: EventQueue::new(),
            now: 0,
            rng: ChaCha20Rng::seed_from_u64(seed),
            timers: BTreeSet::new(),
            view: None,
            records: Vec::new(),
            stats: NetStats::default(),
            audit: BTreeMap::new(),
            finals: None,
        })
    }

    /// Keep every broadcast aggregate for later inspection.
    pub fn keep_final_messages(&mut self) {
        self.finals.get_or_insert_with(Vec::new);
    }

    pub fn final_messages(&self) -> &[Arc<FinalAggregateMessage>] {
        self.finals.as_deref().unwrap_or_default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }

    pub fn peers(&self) -> &[PeerState<M>] {
        &self.peers
    }

    pub fn peer_mut(&mut self, i: usize) -> &mut PeerState<M> {
        &mut self.peers[i]
    }

    pub fn peers_mut(&mut self) -> &mut [PeerState<M>] {
        &mut self.peers
    }

    pub fn churn(&self) -> &ChurnSchedule {
        &self.churn
    }

    pub fn churn_mut(&mut self) -> &mut ChurnSchedule {
        self.view = None;
        &mut self.churn
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn is_available(&self, peer: usize, t: u64) -> bool {
        self.churn.is_available(peer, t)
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn take_records(&mut self) -> Vec<TraceRecord> {
        std::mem::take(&mut self.records)
    }

    /// Appends the end-of-trace marker at the current time.
    pub fn mark_end(&mut self) {
        self.records.push(TraceRecord {
            t: self.now,
            peer: None,
            event: TraceEvent::Net(NetEvent::End),
        });
    }

    pub fn message_audit(&self) -> Vec<MessageAudit> {
        self.audit
            .iter()
            .map(|(id, a)| {
                let s = a.budget;
                let l = a.participants.unwrap_or(s + 1);
                MessageAudit {
                    synergy: *id,
                    delivered: a.delivered,
                    bound: s + self.max_retries * s + l,
                }
            })
            .collect()
    }

    pub fn schedule_initiation(&mut self, at: u64, peer: usize, synergy_size: usize) {
        self.queue.push(
            at.max(self.now),
            SimEvent::Initiate {
                peer,
                size: synergy_size,
            },
        );
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Processes every event up to and including time `t`.
    pub fn run_until(&mut self, t: u64) {
        while self.queue.peek_time().is_some_and(|next| next <= t) {
            self.step();
        }
        self.now = self.now.max(t);
    }

    /// Runs until no events remain.
    pub fn run_until_idle(&mut self) {
        while self.step() {}
    }

    /// Processes one event; false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some((t, event)) = self.queue.pop() else {
            return false;
        };
        self.now = self.now.max(t);
        let now = self.now;
        match event {
            SimEvent::Initiate { peer, size } => {
                if self.churn.is_available(peer, now) {
                    let view = self.view(now);
                    let fx = self.peers[peer].on_discover(&view, size, now);
                    self.apply(peer, fx);
                }
            }
            SimEvent::Timer { peer } => {
                self.timers.remove(&(t, peer));
                let view = self.view(now);
                let fx = self.peers[peer].on_timer(&view, now);
                self.apply(peer, fx);
            }
            SimEvent::Deliver { from, to, message } => {
                if !self.churn.is_available(to, now) {
                    self.stats.lost += 1;
                    self.net_record(
                        from,
                        NetEvent::MessageLost {
                            synergy: message.synergy(),
                            to: to as u64,
                            kind: message.kind(),
                        },
                    );
                    return true;
                }
                self.stats.delivered += 1;
                if !matches!(message, Message::Beacon { .. }) {
                    if let Some(a) = self.audit.get_mut(&message.synergy()) {
                        a.delivered += 1;
                    }
                }
                let sender = self.addresses[from];
                let fx = match message {
                    Message::Envelope(env) => {
                        let view = self.view(now);
                        self.peers[to].on_envelope(env, sender, &view, now)
                    }
                    Message::Beacon { synergy } => self.peers[to].on_beacon(synergy, sender, now),
                    Message::FinalAggregate(msg) => {
                        self.peers[to].on_final_aggregate(&msg, sender, now)
                    }
                };
                self.apply(to, fx);
            }
        }
        true
    }

    /// Addresses of peers discoverable at `t`.
    fn view(&mut self, t: u64) -> Arc<Vec<PeerAddress>> {
        let snap = self.config.discovery_snapshot_ms;
        let at = if snap == 0 { t } else { t - t % snap };
        let epoch = self.churn.epoch(at);
        if let Some((e, v)) = &self.view {
            if *e == epoch {
                return Arc::clone(v);
            }
        }
        let v: Arc<Vec<PeerAddress>> = Arc::new(
            (0..self.peers.len())
                .filter(|&j| self.churn.is_available(j, at))
                .map(|j| self.addresses[j])
                .collect(),
        );
        self.view = Some((epoch, Arc::clone(&v)));
        v
    }

    fn net_record(&mut self, peer: usize, event: NetEvent) {
        self.records.push(TraceRecord {
            t: self.now,
            peer: Some(peer as u64),
            event: TraceEvent::Net(event),
        });
    }

    fn apply(&mut self, peer: usize, fx: Effects) {
        let now = self.now;
        for e in fx.events {
            match &e {
                ProtocolEvent::Initiated {
                    synergy, budget, ..
                } => {
                    self.stats.initiated += 1;
                    self.audit.insert(
                        *synergy,
                        SynergyAudit {
                            budget: *budget as usize,
                            participants: None,
                            delivered: 0,
                        },
                    );
                }
                ProtocolEvent::Completed {
                    synergy,
                    participants,
                } => {
                    self.stats.completed += 1;
                    if let Some(a) = self.audit.get_mut(synergy) {
                        a.participants = Some(participants.len());
                    }
                }
                ProtocolEvent::Failed { .. } => self.stats.failed += 1,
                _ => {}
            }
            self.records.push(TraceRecord {
                t: now,
                peer: Some(peer as u64),
                event: TraceEvent::Protocol(e),
            });
        }
        for t in fx.wakeups {
            if self.timers.insert((t, peer)) {
                self.queue.push(t, SimEvent::Timer { peer });
            }
        }
        let sender_present = self.churn.is_available(peer, now);
        let mut recorded_final: Option<SynergyId> = None;
        for out in fx.outbound {
            let to = out.to.index() as usize;
            if let (Some(finals), Message::FinalAggregate(m)) = (&mut self.finals, &out.message) {
                if recorded_final != Some(m.synergy_id()) {
                    finals.push(Arc::clone(m));
                    recorded_final = Some(m.synergy_id());
                }
            }
            self.stats.sent += 1;
            let info = (out.message.synergy(), to as u64, out.message.kind());
            if !sender_present || to >= self.peers.len() {
                self.stats.lost += 1;
                self.net_record(
                    peer,
                    NetEvent::MessageLost {
                        synergy: info.0,
                        to: info.1,
                        kind: info.2,
                    },
                );
                continue;
            }
            if self.config.drop_prob > 0.0 && self.rng.gen::<f64>() < self.config.drop_prob {
                self.stats.dropped += 1;
                self.net_record(
                    peer,
                    NetEvent::MessageDropped {
                        synergy: info.0,
                        to: info.1,
                        kind: info.2,
                    },
                );
                continue;
            }
            let at = now + self.config.latency.sample(&mut self.rng);
            self.queue.push(
                at,
                SimEvent::Deliver {
                    from: peer,
                    to,
                    message: out.message,
                },
            );
        }
    }
}

/// Builds `n` peers with addresses `0..n`, deterministic identities and,
/// when `encrypted`, simulation-grade Paillier keys of `modulus_bits`.
pub fn spawn_peers<M, F>(
    n: usize,
    encrypted: Option<u64>,
    codec: crate::he::FixedPointCodec,
    config: crate::peer::ProtocolConfig,
    seed: u64,
    mut model: F,
) -> Result<Vec<PeerState<M>>, crate::he::HeError>
where
    M: LocalModel,
    F: FnMut(usize) -> M,
{
    use crate::envelope::Identity;
    use crate::he::{generate_signing_key, keygen, KeygenMode};
    // Separate streams so identities do not depend on whether keys are made.
    let mut id_rng = ChaCha20Rng::seed_from_u64(crate::seed::derive_seed(seed, &[1]));
    let mut key_rng = ChaCha20Rng::seed_from_u64(crate::seed::derive_seed(seed, &[2]));
    (0..n)
        .map(|i| {
            let identity = Identity::new(
                PeerAddress::from_index(i as u64),
                generate_signing_key(&mut id_rng),
            );
            let keys = match encrypted {
                Some(bits) => Some(keygen(bits, KeygenMode::InsecureSimulation, &mut key_rng)?),
                None => None,
            };
            let peer_seed = crate::seed::derive_seed(seed, &[3, i as u64]);
            Ok(PeerState::new(
                identity,
                keys,
                codec,
                config.clone(),
                model(i),
                peer_seed,
            ))
        })
        .collect()
}
