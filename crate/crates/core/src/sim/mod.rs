//! Discrete-event simulation of a peer population.

pub mod churn;
pub mod metrics;
pub mod network;
pub mod queue;
pub mod sampling;
pub mod trace;

use thiserror::Error;

pub use churn::{inject_churn, ChurnConfig, ChurnSchedule};
pub use metrics::{MetricRow, MetricsTable};
pub use network::{Latency, MessageAudit, NetConfig, NetStats, Network};
pub use queue::EventQueue;
pub use sampling::{ParticipantSampler, PeerSampling, SynergySizeLaw};
pub use trace::{verify_protocol_trace, TraceHeader, TraceRecord, TraceReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("power-law exponent must be positive and finite, got {0}")]
    InvalidExponent(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[cfg(test)]
mod tests;
