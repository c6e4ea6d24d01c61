use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::adversary::AttackConfig;
use crate::learning::{
    EarlyStopping, FlConfig, MetricKind, Partition, TaskId, TaskParams, TrainConfig,
};
use crate::peer::ProtocolConfig;
use crate::sim::{ChurnConfig, Latency, PeerSampling, SynergySizeLaw};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub num_peers: usize,
    pub per_hop_drop_prob: f64,
    pub delivery_latency: Latency,
    /// Discovery refresh period in ms; 0 means always current.
    pub discovery_snapshot_ms: u64,
    /// How initiators are drawn each round.
    pub peer_sampling: PeerSampling,
    pub synergy_size_law: SynergySizeLaw,
    /// Upper bound on rounds when the participation target is not met.
    pub rounds: usize,
    /// Participations a peer needs to count towards the stopping rule.
    pub mrt: usize,
    /// Share of peers that must reach `mrt` before the run stops.
    pub mrr: f64,
    pub initiators_per_round: usize,
    pub round_interval_ms: u64,
    /// Gap between consecutive initiations within a round.
    pub initiation_spacing_ms: u64,
    pub churn: ChurnConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_peers: 200,
            per_hop_drop_prob: 0.0,
            delivery_latency: Latency::default(),
            discovery_snapshot_ms: 0,
            peer_sampling: PeerSampling::PowerLaw { a: 2.0 },
            synergy_size_law: SynergySizeLaw::default(),
            rounds: 400,
            mrt: 50,
            mrr: 0.5,
            initiators_per_round: 20,
            round_interval_ms: 30_000,
            initiation_spacing_ms: 50,
            churn: ChurnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_samples: usize,
    pub test_samples: usize,
    pub dim: usize,
    pub classes: usize,
    pub hidden: usize,
    pub positive_rate: f64,
    pub separation: f64,
    pub partition: Partition,
    /// Share of each shard held back to score aggregates. `0` scores them on
    /// the whole shard.
    pub local_validation_fraction: f64,
}

impl DataConfig {
    pub fn task_params(&self) -> TaskParams {
        TaskParams {
            train_samples: self.train_samples,
            test_samples: self.test_samples,
            dim: self.dim,
            classes: self.classes,
            hidden: self.hidden,
            positive_rate: self.positive_rate,
            separation: self.separation,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        let t = TaskParams::default();
        Self {
            train_samples: t.train_samples,
            test_samples: t.test_samples,
            dim: t.dim,
            classes: t.classes,
            hidden: t.hidden,
            positive_rate: t.positive_rate,
            separation: t.separation,
            partition: Partition::LabelSkew {
                classes_per_peer: 6,
            },
            local_validation_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub centralized: bool,
    pub fl: bool,
    pub alone: bool,
    pub early_stopping: EarlyStopping,
    pub federated: FlConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            centralized: true,
            fl: true,
            alone: true,
            early_stopping: EarlyStopping::default(),
            federated: FlConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskId,
    pub seeds: Vec<u64>,
    pub encryption_enabled: bool,
    pub key_bits: u64,
    /// Overrides the task's own choice of acceptance metric.
    pub acceptance_metric: Option<MetricKind>,
    /// Local epochs every peer runs before the first round.
    pub warmup_epochs: usize,
    /// Keep the protocol trace of every run.
    pub trace: bool,
    pub output: Option<PathBuf>,
    pub data: DataConfig,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub protocol: ProtocolConfig,
    pub attack: AttackConfig,
    pub baselines: BaselineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskId::BlobsMlp,
            seeds: vec![1],
            encryption_enabled: false,
            key_bits: 512,
            acceptance_metric: None,
            warmup_epochs: 5,
            trace: false,
            output: None,
            data: DataConfig::default(),
            sim: SimConfig::default(),
            train: TrainConfig {
                epochs: 1,
                ..TrainConfig::default()
            },
            protocol: ProtocolConfig::default(),
            attack: AttackConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let s = &self.sim;
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required"));
        }
        if s.num_peers < self.protocol.min_synergy_size {
            return Err(invalid(format!(
                "minimum synergy size {} exceeds {} peers",
                self.protocol.min_synergy_size, s.num_peers
            )));
        }
        if !(0.0..=1.0).contains(&s.per_hop_drop_prob) {
            return Err(invalid("per_hop_drop_prob must be in [0, 1]"));
        }
        if !(s.mrr > 0.0 && s.mrr <= 1.0) {
            return Err(invalid("mrr must be in (0, 1]"));
        }
        if s.mrt == 0 || s.rounds == 0 || s.initiators_per_round == 0 || s.round_interval_ms == 0 {
            return Err(invalid(
                "mrt, rounds, initiators_per_round and round_interval_ms must be positive",
            ));
        }
        s.synergy_size_law
            .validate(self.protocol.min_synergy_size)
            .map_err(|e| invalid(e.to_string()))?;
        if s.synergy_size_law.bounds().1 > s.num_peers {
            return Err(invalid("synergy sizes exceed the number of peers"));
        }
        let spread = s.initiation_spacing_ms * s.initiators_per_round as u64;
        if spread >= s.round_interval_ms {
            return Err(invalid(
                "initiations of one round must fit inside the round interval",
            ));
        }
        s.churn.validate().map_err(|e| invalid(e.to_string()))?;
        self.protocol
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        self.attack.validate().map_err(|e| invalid(e.to_string()))?;
        if !(0.0..1.0).contains(&self.data.local_validation_fraction) {
            return Err(invalid("local_validation_fraction must be in [0, 1)"));
        }
        if self.encryption_enabled && self.key_bits < crate::he::MIN_MODULUS_BITS {
            return Err(invalid(format!(
                "key_bits below {}",
                crate::he::MIN_MODULUS_BITS
            )));
        }
        if self.baselines.fl && self.baselines.federated.participants_per_round == 0 {
            return Err(invalid("federated participants_per_round must be positive"));
        }
        Ok(())
    }

    /// Canonical JSON, the input of the config hash.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        // Where results go does not change what they are.
        c.output = None;
        serde_json::to_string(&c).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        crate::sim::metrics::config_hash(&self.canonical_json())
    }

    /// Parses TOML and applies `key.path=value` overrides on top.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ExperimentError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

/// Sets `a.b.c=value`; the value is read as a TOML literal when it parses
/// as one and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), ExperimentError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {assignment:?} is not key=value")))?;
    let value = parse_literal(raw.trim());
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(invalid(format!("bad key path {path:?}")));
    }
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("{k} in {path:?} is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}
