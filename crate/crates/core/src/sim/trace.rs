//! JSON-lines protocol traces and the offline invariant checker.
//!
//! Line 1 is a [`TraceHeader`]; every further line is a [`TraceRecord`].

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::SynergyId;
use crate::peer::{MessageKind, ProtocolEvent};

pub const TRACE_SCHEMA: &str = "p4l-trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub max_retries: u32,
    pub hop_timeout_ms: u64,
    /// Allowed lateness of a terminal event past the initiator deadline.
    pub slack_ms: u64,
}

impl TraceHeader {
    pub fn new(max_retries: u32, hop_timeout_ms: u64) -> Self {
        Self {
            schema: TRACE_SCHEMA.to_string(),
            max_retries,
            hop_timeout_ms,
            slack_ms: 0,
        }
    }
}

/// Transport-level happenings recorded by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NetEvent {
    /// Lost to the per-hop drop probability.
    MessageDropped {
        synergy: SynergyId,
        to: u64,
        kind: MessageKind,
    },
    /// Sender or receiver was absent.
    MessageLost {
        synergy: SynergyId,
        to: u64,
        kind: MessageKind,
    },
    /// Marks a complete trace.
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceEvent {
    Protocol(ProtocolEvent),
    Net(NetEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<u64>,
    #[serde(flatten)]
    pub event: TraceEvent,
}

pub fn write_trace<W: Write>(
    mut w: W,
    header: &TraceHeader,
    records: &[TraceRecord],
) -> std::io::Result<()> {
    serde_json::to_writer(&mut w, header)?;
    writeln!(w)?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace is empty; expected a header line")]
    MissingHeader,
    #[error("unsupported trace schema {0:?}")]
    Schema(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    TimeRegression,
    DuplicateInitiation,
    UnknownSynergy,
    ForeignTermination,
    DoubleTermination,
    MissingTermination,
    LateTermination,
    WrongDeadline,
    DuplicateContribution,
    RetryBound,
    UndersizedCompletion,
    ParticipantWithoutContribution,
    AcceptanceRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub line: usize,
    pub kind: ViolationKind,
    pub synergy: Option<SynergyId>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TraceReport {
    pub records: usize,
    pub initiated: usize,
    pub completed: usize,
    pub failed: usize,
    /// Still running when the trace ended, deadline not yet reached.
    pub in_flight: usize,
    pub ended: bool,
    pub violations: Vec<Violation>,
}

impl TraceReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

struct SynergyState {
    initiator: Option<u64>,
    deadline: u64,
    terminated: bool,
}

/// Replays a parsed trace, checking liveness, conservation, duplicate
/// participation, the retry bound and acceptance monotonicity.
pub fn check_records(header: &TraceHeader, records: &[TraceRecord]) -> TraceReport {
    let mut report = TraceReport {
        records: records.len(),
        ..TraceReport::default()
    };
    let mut synergies: BTreeMap<SynergyId, SynergyState> = BTreeMap::new();
    let mut contributions: BTreeSet<(SynergyId, u64)> = BTreeSet::new();
    let mut forwards: BTreeMap<(SynergyId, u64), u32> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut last_t = 0u64;
    let mut end_t = 0u64;

    for (i, rec) in records.iter().enumerate() {
        // Line numbers count the header as line 1.
        let line = i + 2;
        let mut flag = |kind, synergy: Option<SynergyId>, detail: String| {
            violations.push(Violation {
                line,
                kind,
                synergy,
                detail,
            })
        };
        if rec.t < last_t {
            flag(
                ViolationKind::TimeRegression,
                None,
                format!("time {} after {}", rec.t, last_t),
            );
        }
        last_t = last_t.max(rec.t);
        end_t = end_t.max(rec.t);
        let peer = rec.peer.unwrap_or(u64::MAX);
        let TraceEvent::Protocol(event) = &rec.event else {
            if rec.event == TraceEvent::Net(NetEvent::End) {
                report.ended = true;
            }
            continue;
        };
        let id = event.synergy();
        match event {
            ProtocolEvent::Initiated {
                budget,
                deadline_ms,
                ..
            } => {
                report.initiated += 1;
                let expected = rec.t + header.hop_timeout_ms * u64::from(budget.saturating_sub(1));
                if *deadline_ms != expected {
                    flag(
                        ViolationKind::WrongDeadline,
                        Some(id),
                        format!("deadline {deadline_ms}, expected {expected}"),
                    );
                }
                let previous = synergies.insert(
                    id,
                    SynergyState {
                        initiator: rec.peer,
                        deadline: expected,
                        terminated: false,
                    },
                );
                if previous.is_some() {
                    flag(ViolationKind::DuplicateInitiation, Some(id), String::new());
                }
            }
            ProtocolEvent::Contributed { .. } => {
                if !contributions.insert((id, peer)) {
                    flag(
                        ViolationKind::DuplicateContribution,
                        Some(id),
                        format!("peer {peer} contributed twice"),
                    );
                }
            }
            ProtocolEvent::Forwarded { .. } => {
                let n = forwards.entry((id, peer)).or_default();
                *n += 1;
                if *n > header.max_retries + 1 {
                    flag(
                        ViolationKind::RetryBound,
                        Some(id),
                        format!("peer {peer} made {n} forward attempts"),
                    );
                }
            }
            ProtocolEvent::Completed { .. } | ProtocolEvent::Failed { .. } => {
                let completed = matches!(event, ProtocolEvent::Completed { .. });
                if completed {
                    report.completed += 1;
                } else {
                    report.failed += 1;
                }
                match synergies.get_mut(&id) {
                    None => flag(ViolationKind::UnknownSynergy, Some(id), String::new()),
                    Some(s) => {
                        if s.initiator != rec.peer {
                            flag(
                                ViolationKind::ForeignTermination,
                                Some(id),
                                format!("terminated by peer {peer}"),
                            );
                        }
                        if s.terminated {
                            flag(ViolationKind::DoubleTermination, Some(id), String::new());
                        }
                        s.terminated = true;
                        if rec.t > s.deadline + header.slack_ms {
                            flag(
                                ViolationKind::LateTermination,
                                Some(id),
                                format!("terminated at {} past deadline {}", rec.t, s.deadline),
                            );
                        }
                    }
                }
                if let ProtocolEvent::Completed { participants, .. } = event {
                    let distinct: BTreeSet<_> = participants.iter().collect();
                    if participants.len() < 3 || distinct.len() != participants.len() {
                        flag(
                            ViolationKind::UndersizedCompletion,
                            Some(id),
                            format!(
                                "{} participants, {} distinct",
                                participants.len(),
                                distinct.len()
                            ),
                        );
                    }
                    for p in participants {
                        if !contributions.contains(&(id, p.index())) {
                            flag(
                                ViolationKind::ParticipantWithoutContribution,
                                Some(id),
                                format!("peer {} listed without contributing", p.index()),
                            );
                        }
                    }
                }
            }
            ProtocolEvent::AggregateApplied {
                accepted,
                metric_before: Some(before),
                metric_candidate: Some(candidate),
                ..
            } if *accepted && candidate < before => {
                flag(
                    ViolationKind::AcceptanceRegression,
                    Some(id),
                    format!("accepted {candidate} < {before} at peer {peer}"),
                );
            }
            _ => {}
        }
    }

    for (id, s) in &synergies {
        if s.terminated {
            continue;
        }
        if end_t >= s.deadline + header.slack_ms {
            violations.push(Violation {
                line: records.len() + 1,
                kind: ViolationKind::MissingTermination,
                synergy: Some(*id),
                detail: format!("no terminal event by deadline {}", s.deadline),
            });
        } else {
            report.in_flight += 1;
        }
    }
    report.violations = violations;
    report
}

/// Parses and checks a JSON-lines trace.
pub fn verify_protocol_trace<R: BufRead>(reader: R) -> Result<TraceReport, TraceError> {
    let mut lines = reader.lines();
    let header_line = lines.next().ok_or(TraceError::MissingHeader)??;
    let header: TraceHeader =
        serde_json::from_str(&header_line).map_err(|e| TraceError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
    if header.schema != TRACE_SCHEMA {
        return Err(TraceError::Schema(header.schema));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
            line: i + 2,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(check_records(&header, &records))
}
