use super::*;
use crate::he::FixedPointCodec;
use crate::peer::{FixedWeights, ProtocolConfig, ProtocolEvent};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::io::BufReader;

fn plain_net(n: usize, net: NetConfig, churn: ChurnSchedule, seed: u64) -> Network<FixedWeights> {
    let peers = network::spawn_peers(
        n,
        None,
        FixedPointCodec::default(),
        ProtocolConfig::default(),
        seed,
        |i| FixedWeights::new(vec![i as f64, 1.0]),
    )
    .unwrap();
    Network::new(peers, net, churn, seed).unwrap()
}

fn trace_of(net: &mut Network<FixedWeights>) -> TraceReport {
    net.mark_end();
    let header = TraceHeader::new(3, 1_000);
    let mut buf = Vec::new();
    trace::write_trace(&mut buf, &header, net.records()).unwrap();
    verify_protocol_trace(BufReader::new(&buf[..])).unwrap()
}

#[test]
fn reliable_network_completes_everything() {
    let mut net = plain_net(30, NetConfig::default(), ChurnSchedule::none(30), 1);
    for i in 0..10 {
        net.schedule_initiation(i * 10, i as usize, 5);
    }
    net.run_until_idle();
    let s = net.stats();
    assert_eq!((s.initiated, s.completed, s.failed), (10, 10, 0));
    for a in net.message_audit() {
        assert!(a.delivered <= a.bound, "{a:?}");
    }
    let report = trace_of(&mut net);
    assert!(report.is_clean(), "{:?}", report.violations);
}

#[test]
fn total_loss_fails_every_synergy() {
    let cfg = NetConfig {
        drop_prob: 1.0,
        ..NetConfig::default()
    };
    let mut net = plain_net(12, cfg, ChurnSchedule::none(12), 2);
    for i in 0..4 {
        net.schedule_initiation(0, i, 4);
    }
    net.run_until_idle();
    let s = net.stats();
    assert_eq!((s.initiated, s.completed, s.failed), (4, 0, 4));
    assert!(net.peers().iter().all(|p| p.active_synergies().is_empty()));
    assert!(trace_of(&mut net).is_clean());
}

#[test]
fn same_seed_same_trace() {
    let cfg = NetConfig {
        drop_prob: 0.1,
        ..NetConfig::default()
    };
    let run = |seed| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let churn = inject_churn(
            40,
            &ChurnConfig {
                departure_rate_hz: 0.05,
                mean_downtime_ms: 3_000.0,
            },
            60_000,
            &mut rng,
        )
        .unwrap();
        let mut net = plain_net(40, cfg, churn, seed);
        for i in 0..30 {
            net.schedule_initiation(i * 500, (i as usize * 7) % 40, 6);
        }
        net.run_until_idle();
        serde_json::to_string(net.records()).unwrap()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn lossy_churning_network_still_terminates_cleanly() {
    let cfg = NetConfig {
        drop_prob: 0.1,
        discovery_snapshot_ms: 2_000,
        ..NetConfig::default()
    };
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let churn = inject_churn(
        60,
        &ChurnConfig {
            departure_rate_hz: 0.1,
            mean_downtime_ms: 4_000.0,
        },
        120_000,
        &mut rng,
    )
    .unwrap();
    let mut net = plain_net(60, cfg, churn, 9);
    for i in 0..100u64 {
        net.schedule_initiation(i * 1_000, (i as usize * 13) % 60, 3 + (i as usize % 6));
    }
    net.run_until_idle();
    let s = net.stats();
    assert_eq!(s.in_flight(), 0);
    assert!(s.completed > 0 && s.failed > 0, "{s:?}");
    assert!(net.peers().iter().all(|p| p.active_synergies().is_empty()));
    let report = trace_of(&mut net);
    assert!(report.is_clean(), "{:?}", report.violations);
}

#[test]
fn departed_hop_is_routed_around() {
    // Peer 1 leaves at t=1; the discovery snapshot from t=0 still lists it.
    let mut churn = ChurnSchedule::none(6);
    churn.add_absence(1, 1, 1_000_000);
    let cfg = NetConfig {
        discovery_snapshot_ms: 10_000_000,
        latency: Latency::Fixed { ms: 10 },
        ..NetConfig::default()
    };
    let mut net = plain_net(6, cfg, churn, 3);
    net.schedule_initiation(5, 0, 6);
    net.run_until_idle();
    let s = net.stats();
    assert_eq!((s.initiated, s.in_flight()), (1, 0));
    let lost_to_1 = net.records().iter().any(|r| {
        matches!(
            r.event,
            trace::TraceEvent::Net(trace::NetEvent::MessageLost { to: 1, .. })
        )
    });
    let contributed_1 = net.records().iter().any(|r| {
        r.peer == Some(1)
            && matches!(
                r.event,
                trace::TraceEvent::Protocol(ProtocolEvent::Contributed { .. })
            )
    });
    assert!(lost_to_1 && !contributed_1);
    assert!(trace_of(&mut net).is_clean());
}

#[test]
fn initiation_skipped_while_absent() {
    let mut churn = ChurnSchedule::none(5);
    churn.add_absence(0, 0, 100);
    let mut net = plain_net(5, NetConfig::default(), churn, 4);
    net.schedule_initiation(50, 0, 3);
    net.schedule_initiation(150, 0, 3);
    net.run_until_idle();
    assert_eq!(net.stats().initiated, 1);
}

#[test]
fn rejects_mismatched_churn() {
    let peers = network::spawn_peers(
        3,
        None,
        FixedPointCodec::default(),
        ProtocolConfig::default(),
        0,
        |_| FixedWeights::new(vec![0.0]),
    )
    .unwrap();
    assert!(Network::new(peers, NetConfig::default(), ChurnSchedule::none(4), 0).is_err());
}

fn fixed_latency() -> NetConfig {
    NetConfig {
        latency: Latency::Fixed { ms: 10 },
        ..NetConfig::default()
    }
}

fn protocol_events(net: &Network<FixedWeights>) -> Vec<(u64, Option<u64>, ProtocolEvent)> {
    net.records()
        .iter()
        .filter_map(|r| match &r.event {
            trace::TraceEvent::Protocol(e) => Some((r.t, r.peer, e.clone())),
            trace::TraceEvent::Net(_) => None,
        })
        .collect()
}

#[test]
fn hop_two_departure_after_contributing_still_completes() {
    let mut net = plain_net(10, fixed_latency(), ChurnSchedule::none(10), 11);
    net.schedule_initiation(5, 0, 5);
    // Step until the second participant has contributed, then make it leave.
    let mut departed = None;
    while departed.is_none() && net.step() {
        let contributors: Vec<u64> = net
            .records()
            .iter()
            .filter(|r| {
                matches!(
                    r.event,
                    trace::TraceEvent::Protocol(ProtocolEvent::Contributed { .. })
                )
            })
            .filter_map(|r| r.peer)
            .filter(|&p| p != 0)
            .collect();
        if contributors.len() == 2 {
            let p = contributors[1] as usize;
            let now = net.now();
            net.churn_mut().add_absence(p, now + 1, 1_000_000);
            departed = Some(p as u64);
        }
    }
    net.run_until_idle();
    let departed = departed.expect("chain reached a second participant");
    let completed = protocol_events(&net)
        .into_iter()
        .find_map(|(_, _, e)| match e {
            ProtocolEvent::Completed { participants, .. } => Some(participants),
            _ => None,
        });
    let participants = completed.expect("synergy completed");
    assert_eq!(participants.len(), 5);
    assert!(participants.iter().any(|p| p.index() == departed));
    // Its beacon and its copy of the aggregate never arrive.
    assert!(net.records().iter().any(|r| matches!(
        r.event,
        trace::TraceEvent::Net(trace::NetEvent::MessageLost { to, .. }) if to == departed
    )));
    assert!(trace_of(&mut net).is_clean());
}

#[test]
fn initiator_departure_fails_at_deadline() {
    let mut churn = ChurnSchedule::none(8);
    churn.add_absence(0, 20, 1_000_000);
    let mut net = plain_net(8, fixed_latency(), churn, 12);
    net.schedule_initiation(5, 0, 4);
    net.run_until_idle();
    let events = protocol_events(&net);
    let deadline = events
        .iter()
        .find_map(|(_, _, e)| match e {
            ProtocolEvent::Initiated { deadline_ms, .. } => Some(*deadline_ms),
            _ => None,
        })
        .unwrap();
    // Four peers means a budget of S = 3 slots after the initiator.
    assert_eq!(deadline, 5 + (3 - 1) * 1_000);
    assert!(!events
        .iter()
        .any(|(_, _, e)| matches!(e, ProtocolEvent::Completed { .. })));
    let failed: Vec<_> = events
        .iter()
        .filter_map(|(t, peer, e)| match e {
            ProtocolEvent::Failed { reason, .. } => Some((*t, *peer, *reason)),
            _ => None,
        })
        .collect();
    assert_eq!(
        failed,
        vec![(deadline, Some(0), crate::peer::FailReason::Deadline)]
    );
    // The returning envelope was lost to the absent initiator.
    assert!(net.records().iter().any(|r| matches!(
        r.event,
        trace::TraceEvent::Net(trace::NetEvent::MessageLost { to: 0, .. })
    )));
    assert!(trace_of(&mut net).is_clean());
}
