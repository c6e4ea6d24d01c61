//! End-to-end experiments: data, peers, churn, attacks and baselines wired
//! into one deterministic run per seed.

mod config;
mod learner;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{make_byzantine_population, poison_shard, AdversaryError, AttackKind};
use crate::he::{FixedPointCodec, HeError};
use crate::learning::{
    centralized_baseline, evaluate, fl_baseline, make_task, partition_data, Dataset, Evaluation,
    LearningError, ModelParams, TrainConfig,
};
use crate::peer::{ProtocolConfig, ProtocolEvent};
use crate::seed::derive_seed;
use crate::sim::metrics::mean_std;
use crate::sim::network::spawn_peers;
use crate::sim::trace::{write_trace, TraceEvent};
use crate::sim::{
    inject_churn, MetricRow, MetricsTable, NetConfig, NetStats, Network, ParticipantSampler,
    SimError, TraceHeader, TraceRecord,
};

pub use config::{apply_override, BaselineConfig, DataConfig, ExperimentConfig, SimConfig};
pub use learner::{Learner, NoisyWeights};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    He(#[from] HeError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<csv::Error> for ExperimentError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Mean test metrics over a group of peers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub loss: f64,
    pub accuracy: f64,
    /// NaN when no peer in the group had a defined AUC.
    pub auc: f64,
    pub n_peers: usize,
}

impl GroupMetrics {
    fn of(evals: &[Evaluation]) -> Option<Self> {
        if evals.is_empty() {
            return None;
        }
        let col =
            |f: &dyn Fn(&Evaluation) -> f64| mean_std(&evals.iter().map(f).collect::<Vec<_>>()).0;
        Some(Self {
            loss: col(&|e| e.loss),
            accuracy: col(&|e| e.accuracy),
            auc: col(&|e| e.auc.unwrap_or(f64::NAN)),
            n_peers: evals.len(),
        })
    }

    pub fn get(&self, metric: crate::learning::MetricKind) -> f64 {
        match metric {
            crate::learning::MetricKind::Accuracy => self.accuracy,
            crate::learning::MetricKind::Auc => self.auc,
        }
    }
}

/// Headline numbers of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub rounds_run: usize,
    /// Whether the participation target was met before the round budget ran out.
    pub target_met: bool,
    pub net: NetStats,
    pub aggregates_accepted: usize,
    pub aggregates_rejected: usize,
    /// Honest peers at the largest participation count reached by any of
    /// them, capped at `mrt`.
    pub p4l: Option<GroupMetrics>,
    pub p4l_participations: usize,
    pub alone: Option<GroupMetrics>,
    pub centralized: Option<GroupMetrics>,
    pub fl: Option<GroupMetrics>,
    pub byzantine_peers: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: MetricsTable,
    pub summary: RunSummary,
    pub trace: Option<(TraceHeader, Vec<TraceRecord>)>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub runs: Vec<RunOutput>,
    /// Per-seed rows averaged across seeds; `std` is the spread across seeds.
    pub summary: MetricsTable,
}

struct RowMaker<'a> {
    hash: String,
    seed: u64,
    cfg: &'a ExperimentConfig,
}

impl RowMaker<'_> {
    fn row(&self, round: u64, name: &str, mean: f64, std: f64, n: usize) -> MetricRow {
        MetricRow {
            round,
            metric_name: name.to_string(),
            mean,
            std,
            n_peers: n,
            config_hash: self.hash.clone(),
            seed: self.seed,
            attack_kind: self.cfg.attack.kind.name().to_string(),
            byzantine_fraction: self.cfg.attack.byzantine_fraction,
        }
    }

    fn group(&self, table: &mut MetricsTable, round: u64, prefix: &str, evals: &[Evaluation]) {
        let pick: [(&str, fn(&Evaluation) -> f64); 3] = [
            ("loss", |e| e.loss),
            ("accuracy", |e| e.accuracy),
            ("auc", |e| e.auc.unwrap_or(f64::NAN)),
        ];
        for (name, f) in pick {
            let values: Vec<f64> = evals.iter().map(f).collect();
            let (m, s, n) = mean_std(&values);
            table.push(self.row(round, &format!("{prefix}_{name}"), m, s, n));
        }
    }
}

/// Codec sized for the largest synergy the configuration can produce.
pub fn codec_for(cfg: &ExperimentConfig) -> Result<FixedPointCodec, HeError> {
    let d = FixedPointCodec::default();
    let largest = cfg.sim.synergy_size_law.bounds().1.max(2) as u32;
    FixedPointCodec::new(d.scale_exp, d.slot_bits, largest)
}

fn protocol_header(p: &ProtocolConfig) -> TraceHeader {
    TraceHeader::new(p.max_retries, p.hop_timeout_ms)
}

/// One complete run: baselines and the chain protocol on identical data.
pub fn run_simulation(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let s = &cfg.sim;
    let n = s.num_peers;
    let stream = |k: u64| derive_seed(seed, &[k]);
    let rm = RowMaker {
        hash: cfg.hash(),
        seed,
        cfg,
    };

    let task = make_task(cfg.task, &cfg.data.task_params(), stream(1))?;
    let metric = cfg.acceptance_metric.unwrap_or(task.metric);
    let clean_shards = partition_data(
        &task.train,
        n,
        cfg.data.partition,
        &mut ChaCha20Rng::seed_from_u64(stream(2)),
    )?;
    let population =
        make_byzantine_population(n, &cfg.attack, &mut ChaCha20Rng::seed_from_u64(stream(3)))?;
    let mut poison_rng = ChaCha20Rng::seed_from_u64(stream(4));
    let shards: Vec<Dataset> = clean_shards
        .iter()
        .enumerate()
        .map(|(i, d)| {
            if population.is_byzantine(i) {
                poison_shard(&population.kind, d, &mut poison_rng)
            } else {
                Ok(d.clone())
            }
        })
        .collect::<Result<_, _>>()?;
    let init = ModelParams::init(
        task.arch.clone(),
        cfg.task.name(),
        &mut ChaCha20Rng::seed_from_u64(stream(5)),
    )?;
    let noisy = match &population.kind {
        AttackKind::NoisyWeights { sigma, layers } => Some(NoisyWeights {
            layers: layers.clone(),
            sigma: *sigma,
        }),
        _ => None,
    };

    // Warm-up: every peer starts from the common model and trains alone for a while.
    let warmup = TrainConfig {
        epochs: cfg.warmup_epochs,
        ..cfg.train
    };
    let vfrac = cfg.data.local_validation_fraction;
    let mut learners: Vec<Learner> = shards
        .par_iter()
        .enumerate()
        .map(|(i, shard)| {
            let (validation, fit) = if vfrac > 0.0 {
                shard.split(
                    vfrac,
                    &mut ChaCha20Rng::seed_from_u64(derive_seed(seed, &[6, i as u64])),
                )
            } else {
                (shard.clone(), shard.clone())
            };
            let mut l = Learner::new(
                init.clone(),
                fit,
                validation,
                metric,
                derive_seed(seed, &[7, i as u64]),
            );
            if population.is_byzantine(i) {
                l.noisy = noisy.clone();
            }
            if cfg.warmup_epochs > 0 {
                l.train(&warmup)?;
            }
            Ok(l)
        })
        .collect::<Result<_, LearningError>>()?;
    let honest: Vec<usize> = (0..n).filter(|&i| !population.is_byzantine(i)).collect();
    let mut table = MetricsTable::new();

    // Train-alone: the same warm-up, then as much extra local training as a
    // peer reaching the participation target would get between rounds.
    let alone = if cfg.baselines.alone {
        let extra = TrainConfig {
            epochs: s.mrt * cfg.train.epochs,
            ..cfg.train
        };
        let evals: Vec<Evaluation> = honest
            .par_iter()
            .map(|&i| {
                let mut l = learners[i].clone();
                l.train(&extra)?;
                evaluate(&l.model, &task.test)
            })
            .collect::<Result<_, _>>()?;
        rm.group(&mut table, 0, "alone", &evals);
        GroupMetrics::of(&evals)
    } else {
        None
    };

    let centralized = if cfg.baselines.centralized {
        let r = centralized_baseline(
            &init,
            &task.train,
            &task.test,
            &cfg.train,
            &cfg.baselines.early_stopping,
            stream(8),
        )?;
        rm.group(&mut table, 0, "centralized", std::slice::from_ref(&r.test));
        table.push(rm.row(0, "centralized_epochs", r.epochs_run as f64, 0.0, 1));
        GroupMetrics::of(std::slice::from_ref(&r.test))
    } else {
        None
    };

    let fl = if cfg.baselines.fl {
        let mut fl_cfg = cfg.baselines.federated.clone();
        fl_cfg.participants_per_round = fl_cfg.participants_per_round.min(n);
        let r = fl_baseline(&init, &shards, &task.test, &cfg.train, &fl_cfg, stream(9))?;
        for (k, e) in r.rounds.iter().enumerate() {
            rm.group(&mut table, k as u64 + 1, "fl", std::slice::from_ref(e));
        }
        r.rounds
            .last()
            .and_then(|e| GroupMetrics::of(std::slice::from_ref(e)))
    } else {
        None
    };

    // The chain protocol.
    let codec = codec_for(cfg)?;
    let mut feed = learners.drain(..);
    let peers = spawn_peers(
        n,
        cfg.encryption_enabled.then_some(cfg.key_bits),
        codec,
        cfg.protocol.clone(),
        stream(10),
        |_| feed.next().expect("one learner per peer"),
    )?;
    drop(feed);
    let horizon = s.rounds as u64 * s.round_interval_ms;
    let churn = inject_churn(
        n,
        &s.churn,
        horizon,
        &mut ChaCha20Rng::seed_from_u64(stream(11)),
    )?;
    let net_cfg = NetConfig {
        drop_prob: s.per_hop_drop_prob,
        latency: s.delivery_latency.clone(),
        discovery_snapshot_ms: s.discovery_snapshot_ms,
    };
    let mut net = Network::new(peers, net_cfg, churn, stream(12))?;
    let mut select_rng = ChaCha20Rng::seed_from_u64(stream(13));
    let sampler = ParticipantSampler::new(s.peer_sampling, n, &mut select_rng)?;

    let mut counts = vec![0usize; n];
    // history[p][c - 1]: test metrics of peer p right after its c-th participation.
    let mut history: Vec<Vec<Evaluation>> = vec![Vec::new(); n];
    let mut trace = cfg.trace.then(Vec::new);
    let (mut accepted, mut rejected) = (0, 0);
    let mut rounds_run = 0;
    let mut target_met = false;
    for round in 0..s.rounds {
        let t0 = round as u64 * s.round_interval_ms;
        let initiators = sampler.select(s.initiators_per_round, &mut select_rng, |i| {
            net.is_available(i, t0)
        });
        for (j, &p) in initiators.iter().enumerate() {
            let size = s.synergy_size_law.sample(&mut select_rng);
            net.schedule_initiation(t0 + j as u64 * s.initiation_spacing_ms, p, size);
        }
        net.run_until(t0 + s.round_interval_ms - 1);
        rounds_run = round + 1;

        let records = net.take_records();
        let mut dirty = BTreeSet::new();
        for r in &records {
            if let (
                TraceEvent::Protocol(ProtocolEvent::AggregateApplied { accepted: ok, .. }),
                Some(p),
            ) = (&r.event, r.peer)
            {
                let p = p as usize;
                counts[p] += 1;
                dirty.insert(p);
                if *ok {
                    accepted += 1;
                } else {
                    rejected += 1;
                }
            }
        }
        if let Some(t) = trace.as_mut() {
            t.extend(records);
        }

        let test = &task.test;
        let train_cfg = &cfg.train;
        let byz = &population;
        let updates: Vec<(usize, Option<Evaluation>)> = net
            .peers_mut()
            .par_iter_mut()
            .enumerate()
            .filter(|(i, _)| dirty.contains(i))
            .map(|(i, p)| {
                let l = p.model_mut();
                l.train(train_cfg)?;
                let e = if byz.is_byzantine(i) {
                    None
                } else {
                    Some(evaluate(&l.model, test)?)
                };
                Ok((i, e))
            })
            .collect::<Result<_, LearningError>>()?;
        for (i, e) in updates {
            if let Some(e) = e {
                history[i].resize(counts[i], e);
            }
        }

        let reached = counts.iter().filter(|&&c| c >= s.mrt).count();
        if reached as f64 >= s.mrr * n as f64 {
            target_met = true;
            break;
        }
    }
    if let Some(t) = trace.as_mut() {
        net.mark_end();
        t.extend(net.take_records());
    }

    let deepest = honest.iter().map(|&i| history[i].len()).max().unwrap_or(0);
    let mut p4l = None;
    for c in 1..=deepest {
        let evals: Vec<Evaluation> = honest
            .iter()
            .filter(|&&i| history[i].len() >= c)
            .map(|&i| history[i][c - 1])
            .collect();
        rm.group(&mut table, c as u64, "p4l", &evals);
        if c <= s.mrt {
            p4l = GroupMetrics::of(&evals);
        }
    }
    let stats = net.stats();
    for (name, v) in [
        ("synergies_initiated", stats.initiated),
        ("synergies_completed", stats.completed),
        ("synergies_failed", stats.failed),
        ("messages_dropped", stats.dropped),
        ("messages_lost", stats.lost),
        ("aggregates_accepted", accepted),
        ("aggregates_rejected", rejected),
        ("rounds_run", rounds_run),
    ] {
        table.push(rm.row(0, name, v as f64, 0.0, n));
    }

    Ok(RunOutput {
        table,
        summary: RunSummary {
            seed,
            rounds_run,
            target_met,
            net: stats,
            aggregates_accepted: accepted,
            aggregates_rejected: rejected,
            p4l,
            p4l_participations: deepest.min(s.mrt),
            alone,
            centralized,
            fl,
            byzantine_peers: population.len(),
        },
        trace: trace.map(|t| (protocol_header(&cfg.protocol), t)),
    })
}

/// Averages rows sharing `(round, metric_name)` across seeds.
pub fn summarize(runs: &[RunOutput]) -> MetricsTable {
    let mut groups: BTreeMap<(String, u64), Vec<&MetricRow>> = BTreeMap::new();
    for r in runs {
        for row in &r.table.rows {
            groups
                .entry((row.metric_name.clone(), row.round))
                .or_default()
                .push(row);
        }
    }
    let mut out = MetricsTable::new();
    for ((name, round), rows) in groups {
        let means: Vec<f64> = rows.iter().map(|r| r.mean).collect();
        let (m, s, _) = mean_std(&means);
        let first = rows[0];
        out.push(MetricRow {
            round,
            metric_name: name,
            mean: m,
            std: s,
            n_peers: rows.iter().map(|r| r.n_peers).sum::<usize>() / rows.len(),
            config_hash: first.config_hash.clone(),
            seed: 0,
            attack_kind: first.attack_kind.clone(),
            byzantine_fraction: first.byzantine_fraction,
        });
    }
    out
}

/// Runs every seed in parallel and writes results when `output` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let runs: Vec<RunOutput> = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_simulation(cfg, seed))
        .collect::<Result<_, _>>()?;
    let summary = summarize(&runs);
    let out = ExperimentOutput {
        config: cfg.clone(),
        runs,
        summary,
    };
    if let Some(dir) = &cfg.output {
        write_outputs(&out, dir)?;
    }
    Ok(out)
}

/// `metrics.csv`, `summary.csv`, `config.toml` and one trace per seed.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let mut all = MetricsTable::new();
    for r in &out.runs {
        all.extend(r.table.clone());
    }
    all.save(&dir.join("metrics.csv"))?;
    out.summary.save(&dir.join("summary.csv"))?;
    std::fs::write(dir.join("config.toml"), out.config.to_toml())?;
    for r in &out.runs {
        if let Some((header, records)) = &r.trace {
            let f = std::fs::File::create(dir.join(format!("trace-seed{}.jsonl", r.summary.seed)))?;
            write_trace(std::io::BufWriter::new(f), header, records)?;
        }
    }
    Ok(())
}

/// One grid cell: its label and the overrides that define it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub label: String,
    pub overrides: Vec<String>,
}

/// Cartesian product of `key=v1,v2,...` axes.
pub fn expand_grid(axes: &[String]) -> Result<Vec<GridCell>, ExperimentError> {
    let mut cells = vec![GridCell {
        label: String::new(),
        overrides: Vec::new(),
    }];
    for axis in axes {
        let (key, values) = axis.split_once('=').ok_or_else(|| {
            ExperimentError::Config(format!("grid axis {axis:?} is not key=v1,v2"))
        })?;
        let values: Vec<&str> = split_top_level(values);
        if values.is_empty() {
            return Err(ExperimentError::Config(format!(
                "grid axis {key} has no values"
            )));
        }
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut next = c.clone();
                    let part = format!("{}={}", key.trim(), v.trim());
                    if !next.label.is_empty() {
                        next.label.push(',');
                    }
                    next.label.push_str(&part);
                    next.overrides.push(part);
                    next
                })
            })
            .collect();
    }
    Ok(cells)
}

/// Splits on commas that are not inside brackets or braces.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in s.char_indices() {
        match ch {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out.into_iter().filter(|v| !v.trim().is_empty()).collect()
}

/// Runs every grid cell in parallel on top of `base_toml` plus `overrides`.
/// Each cell writes into `<output>/<config hash>/` when an output is set.
pub fn run_grid(
    base_toml: &str,
    overrides: &[String],
    axes: &[String],
) -> Result<Vec<(GridCell, ExperimentOutput)>, ExperimentError> {
    let cells = expand_grid(axes)?;
    let configs: Vec<(GridCell, ExperimentConfig)> = cells
        .into_iter()
        .map(|cell| {
            let all: Vec<String> = overrides.iter().chain(&cell.overrides).cloned().collect();
            let mut cfg = ExperimentConfig::from_toml(base_toml, &all)?;
            if let Some(dir) = &cfg.output {
                cfg.output = Some(dir.join(cfg.hash()));
            }
            Ok((cell, cfg))
        })
        .collect::<Result<_, ExperimentError>>()?;
    configs
        .into_par_iter()
        .map(|(cell, cfg)| run_experiment(&cfg).map(|o| (cell, o)))
        .collect()
}
