use super::*;
use crate::he::{generate_signing_key, keygen, KeygenMode};
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Fixture {
    rng: ChaCha20Rng,
    kp: KeyPair,
    codec: FixedPointCodec,
    peers: Vec<Identity>,
}

fn fixture(peers: usize) -> Fixture {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let kp = keygen(512, KeygenMode::InsecureSimulation, &mut rng).unwrap();
    let peers = (0..peers)
        .map(|i| {
            Identity::new(
                PeerAddress::from_index(i as u64),
                generate_signing_key(&mut rng),
            )
        })
        .collect();
    Fixture {
        rng,
        kp,
        codec: FixedPointCodec::default(),
        peers,
    }
}

/// Runs a full chain: peer 0 initiates with budget `peers - 1`, everyone
/// else accumulates in order. Prefixes shorter than three peers keep a
/// budget of two, so they stop mid-chain.
fn chain(f: &mut Fixture, weights: &[Vec<f64>], encrypted: bool) -> Vec<SynergyEnvelope> {
    let pk = encrypted.then_some(&f.kp.public);
    let budget = (weights.len() - 1).max(2) as u32;
    let mut envs = vec![create_initial_envelope(
        &f.peers[0],
        pk,
        &f.codec,
        &weights[0],
        budget,
        1_000,
        &mut f.rng,
    )
    .unwrap()];
    for (i, w) in weights.iter().enumerate().skip(1) {
        let prev = envs.last().unwrap();
        let next = accumulate_and_forward(
            prev,
            &f.peers[i],
            &f.codec,
            w,
            1_000 + i as u64 * 10,
            &mut f.rng,
        )
        .unwrap();
        envs.push(next);
    }
    envs
}

#[test]
fn initial_envelope_postconditions() {
    let mut f = fixture(1);
    let env = create_initial_envelope(
        &f.peers[0],
        Some(&f.kp.public),
        &f.codec,
        &[0.1, 0.2, 0.3, 0.4],
        2,
        7,
        &mut f.rng,
    )
    .unwrap();
    assert_eq!(env.participants(), &[f.peers[0].address]);
    assert_eq!(env.remaining(), Some(2));
    assert_eq!(env.accumulated().weight_count(), 4);
    assert!(env.verify_signature());
    assert!(!env.is_terminal());
    assert_eq!(env.initiator_pk(), Some(&f.kp.public));
    assert_eq!(
        env.synergy_id(),
        SynergyId::derive(&f.kp.public.to_bytes(), 7)
    );
}

#[test]
fn budget_below_two_is_rejected() {
    let mut f = fixture(1);
    let err = create_initial_envelope(
        &f.peers[0],
        Some(&f.kp.public),
        &f.codec,
        &[1.0],
        1,
        0,
        &mut f.rng,
    )
    .unwrap_err();
    assert_eq!(err, EnvelopeError::SynergyTooSmall { size: 2 });
}

#[test]
fn out_of_range_weights_are_rejected_in_both_modes() {
    let mut f = fixture(1);
    for pk in [Some(&f.kp.public), None] {
        let err = create_initial_envelope(
            &f.peers[0],
            pk,
            &f.codec,
            &[0.0, f64::INFINITY],
            2,
            0,
            &mut f.rng,
        )
        .unwrap_err();
        assert_eq!(
            err,
            EnvelopeError::Crypto(HeError::NonFiniteWeight { index: 1 })
        );
    }
}

#[test]
fn three_peer_chain_sums_encodings() {
    let mut f = fixture(3);
    let weights = vec![
        vec![0.5, -1.5, 2.0],
        vec![0.25, 0.0, -3.0],
        vec![-0.125, 4.0, 1e-10],
    ];
    let envs = chain(&mut f, &weights, true);
    let last = envs.last().unwrap();
    assert!(last.is_terminal());
    assert_eq!(last.remaining(), None);
    assert_eq!(last.participants().len(), 3);
    let Accumulated::Encrypted(c) = last.accumulated() else {
        panic!("encrypted payload expected")
    };
    let n = f.kp.public.n();
    let mut oracle = vec![BigUint::zero(); 3];
    for w in &weights {
        for (o, e) in oracle
            .iter_mut()
            .zip(encode_weights(w, &f.codec, n).unwrap())
        {
            *o = (&*o + e) % n;
        }
    }
    assert_eq!(decrypt_packed(&f.kp.secret, c).unwrap(), oracle);
}

#[test]
fn chain_soundness_for_every_length() {
    for k in 2..=9usize {
        let mut f = fixture(k + 1);
        let weights: Vec<Vec<f64>> = (0..=k)
            .map(|_| (0..7).map(|_| f.rng.gen_range(-50.0..50.0)).collect())
            .collect();
        let envs = chain(&mut f, &weights, true);
        for (hop, env) in envs.iter().enumerate() {
            assert!(env.verify_signature());
            assert_eq!(env.participants().len(), hop + 1);
            if let Some(s) = env.remaining() {
                assert_eq!(s as usize + env.participants().len() - 1, k);
            }
        }
        let last = envs.last().unwrap();
        assert!(last.is_terminal());
        let Accumulated::Encrypted(c) = last.accumulated() else {
            panic!()
        };
        let got = decrypt_packed(&f.kp.secret, c).unwrap();
        let n = f.kp.public.n();
        let got = decode_weights(&got, &f.codec, n, 1).unwrap();
        for j in 0..7 {
            let ints: i128 = weights
                .iter()
                .map(|w| f.codec.encode_value(j, w[j]).unwrap())
                .sum();
            assert_eq!(got[j], ints as f64 / f.codec.scale(), "k={k} j={j}");
        }
    }
}

#[test]
fn tampering_invalidates_every_byte() {
    let mut f = fixture(2);
    let envs = chain(
        &mut f,
        &[vec![0.3, 0.1], vec![0.6, 0.2], vec![0.9, 0.3]][..2],
        true,
    );
    let env = &envs[1];
    let wire = env.to_bytes();
    assert_eq!(SynergyEnvelope::from_bytes(&wire).unwrap(), *env);
    for i in 0..wire.len() {
        let mut bad = wire.clone();
        bad[i] ^= 0x01;
        if let Ok(parsed) = SynergyEnvelope::from_bytes(&bad) {
            assert!(
                !parsed.verify_signature(),
                "flip at byte {i} went unnoticed"
            );
        }
    }
}

#[test]
fn flipped_ciphertext_byte_fails_accumulation() {
    let mut f = fixture(2);
    let env = create_initial_envelope(
        &f.peers[0],
        Some(&f.kp.public),
        &f.codec,
        &[1.0, 2.0],
        2,
        0,
        &mut f.rng,
    )
    .unwrap();
    let mut wire = env.to_bytes();
    // The last ciphertext byte sits just before the participant list.
    let offset = wire.len() - 64 - 32 - 8 - 16 - 4 - 1;
    wire[offset] ^= 0x80;
    let bad = SynergyEnvelope::from_bytes(&wire).unwrap();
    assert_ne!(bad.accumulated(), env.accumulated());
    let err = accumulate_and_forward(&bad, &f.peers[1], &f.codec, &[0.0, 0.0], 1, &mut f.rng)
        .unwrap_err();
    assert_eq!(err, EnvelopeError::BadSignature);
}

#[test]
fn duplicate_participant_and_exhausted_envelopes_are_refused() {
    let mut f = fixture(3);
    let envs = chain(&mut f, &[vec![1.0], vec![2.0]], true);
    let err =
        accumulate_and_forward(&envs[1], &f.peers[0], &f.codec, &[1.0], 5, &mut f.rng).unwrap_err();
    assert_eq!(err, EnvelopeError::DuplicateParticipant(f.peers[0].address));

    let envs = chain(&mut f, &[vec![1.0], vec![2.0], vec![3.0]], true);
    assert!(envs[2].is_terminal());
    let mut g = fixture(4);
    let err =
        accumulate_and_forward(&envs[2], &g.peers[3], &g.codec, &[1.0], 5, &mut g.rng).unwrap_err();
    assert_eq!(err, EnvelopeError::Exhausted);
}

#[test]
fn finalize_computes_the_mean() {
    for encrypted in [true, false] {
        let mut f = fixture(3);
        let envs = chain(&mut f, &[vec![0.3], vec![0.6], vec![0.9]], encrypted);
        let kp = encrypted.then_some(&f.kp);
        let msg = finalize_aggregate(envs.last().unwrap(), &f.peers[0], kp, &f.codec, 99).unwrap();
        assert_eq!(msg.participant_count(), 3);
        assert!((msg.aggregate()[0] - 0.6).abs() < 1e-12);
        if encrypted {
            assert_eq!(msg.aggregate(), &[0.6]);
        }
        msg.verify(&f.codec).unwrap();
        let wire = msg.to_bytes();
        assert_eq!(FinalAggregateMessage::from_bytes(&wire).unwrap(), msg);
    }
}

#[test]
fn all_zero_weights_average_to_zero() {
    for size in 3..=6 {
        let mut f = fixture(size);
        let weights = vec![vec![0.0; 9]; size];
        let envs = chain(&mut f, &weights, true);
        let msg = finalize_aggregate(envs.last().unwrap(), &f.peers[0], Some(&f.kp), &f.codec, 1)
            .unwrap();
        assert_eq!(msg.aggregate(), &[0.0; 9]);
    }
}

#[test]
fn two_peer_synergies_never_finalize() {
    let mut f = fixture(2);
    let envs = chain(
        &mut f,
        &[vec![1.0], vec![2.0], vec![3.0]][..2].to_vec(),
        true,
    );
    // Budget 2 but only one participant joined: the early return refuses.
    let err = envs[1].into_early_return(&f.peers[1], 10).unwrap_err();
    assert_eq!(err, EnvelopeError::SynergyTooSmall { size: 2 });

    // A hand-built two-peer return envelope is refused by the initiator.
    let mut forged = envs[1].clone();
    forged.stage = Stage::Return;
    forged.sign(&f.peers[1], 11);
    let err = finalize_aggregate(&forged, &f.peers[0], Some(&f.kp), &f.codec, 12).unwrap_err();
    assert_eq!(err, EnvelopeError::SynergyTooSmall { size: 2 });
}

#[test]
fn early_return_keeps_the_partial_sum() {
    let mut f = fixture(4);
    let weights = vec![vec![1.0], vec![2.0], vec![3.0]];
    // Budget for five peers, but the chain stops after three.
    let mut env = create_initial_envelope(
        &f.peers[0],
        Some(&f.kp.public),
        &f.codec,
        &weights[0],
        4,
        0,
        &mut f.rng,
    )
    .unwrap();
    for i in 1..3 {
        env = accumulate_and_forward(
            &env,
            &f.peers[i],
            &f.codec,
            &weights[i],
            i as u64,
            &mut f.rng,
        )
        .unwrap();
    }
    assert_eq!(env.remaining(), Some(2));
    assert_eq!(
        env.into_early_return(&f.peers[1], 5).unwrap_err(),
        EnvelopeError::NotSender
    );
    let back = env.into_early_return(&f.peers[2], 5).unwrap();
    assert!(back.is_terminal() && back.verify_signature());
    let msg = finalize_aggregate(&back, &f.peers[0], Some(&f.kp), &f.codec, 6).unwrap();
    assert_eq!(msg.aggregate(), &[2.0]);
    assert_eq!(
        finalize_aggregate(&back, &f.peers[1], Some(&f.kp), &f.codec, 6).unwrap_err(),
        EnvelopeError::NotInitiator
    );
}

#[test]
fn forged_aggregates_are_detected() {
    let mut f = fixture(3);
    let envs = chain(
        &mut f,
        &[vec![0.5, 1.0], vec![1.5, 2.0], vec![2.5, 3.0]],
        true,
    );
    let msg =
        finalize_aggregate(envs.last().unwrap(), &f.peers[0], Some(&f.kp), &f.codec, 9).unwrap();

    let mut lie = msg.clone();
    lie.aggregate[0] += 0.25;
    assert_eq!(
        lie.verify(&f.codec).unwrap_err(),
        EnvelopeError::BadSignature
    );
    lie.signature = sign_message(&f.peers[0].signing_key, &lie.canonical_bytes());
    assert_eq!(
        lie.verify(&f.codec).unwrap_err(),
        EnvelopeError::AggregateMismatch
    );

    let mut lie = msg.clone();
    if let Evidence::Decryption { sums, .. } = &mut lie.evidence {
        sums[1] += 1u8;
    }
    lie.signature = sign_message(&f.peers[0].signing_key, &lie.canonical_bytes());
    assert_eq!(
        lie.verify(&f.codec).unwrap_err(),
        EnvelopeError::InvalidProof
    );
}

#[test]
fn canonical_bytes_are_deterministic_and_injective() {
    let mut f = fixture(2);
    let envs = chain(&mut f, &[vec![0.1, 0.2], vec![0.3, 0.4]], true);
    let env = &envs[1];
    assert_eq!(env.canonical_bytes(), env.clone().canonical_bytes());
    let later = env.resign(&f.peers[1], env.timestamp_ms() + 1).unwrap();
    assert_ne!(later.canonical_bytes(), env.canonical_bytes());
    assert!(later.verify_signature());
    assert_eq!(
        SynergyEnvelope::from_bytes(&later.to_bytes()).unwrap(),
        later
    );
}

#[test]
fn plaintext_pipeline_round_trips() {
    let mut f = fixture(4);
    let envs = chain(
        &mut f,
        &[
            vec![1.0, -1.0],
            vec![2.0, -2.0],
            vec![3.0, -3.0],
            vec![4.0, -4.0],
        ],
        false,
    );
    for env in &envs {
        assert!(!env.is_encrypted());
        assert_eq!(SynergyEnvelope::from_bytes(&env.to_bytes()).unwrap(), *env);
    }
    let last = envs.last().unwrap();
    assert_eq!(
        last.accumulated(),
        &Accumulated::Plaintext(vec![10.0, -10.0])
    );
    let msg = finalize_aggregate(last, &f.peers[0], None, &f.codec, 50).unwrap();
    assert_eq!(msg.aggregate(), &[2.5, -2.5]);
    assert_eq!(msg.evidence(), &Evidence::Plaintext);
}

#[test]
fn mixing_modes_is_refused() {
    let mut f = fixture(2);
    let env =
        create_initial_envelope(&f.peers[0], None, &f.codec, &[1.0], 2, 0, &mut f.rng).unwrap();
    let err = finalize_aggregate(&env, &f.peers[0], Some(&f.kp), &f.codec, 1).unwrap_err();
    assert_eq!(err, EnvelopeError::NotTerminal);
    let envs = chain(&mut f, &[vec![1.0], vec![1.0]], true);
    let mut forged = envs[1].clone();
    forged.stage = Stage::Forward {
        initiator_pk: None,
        remaining: 1,
    };
    assert_eq!(
        SynergyEnvelope::from_bytes(&forged.to_bytes()).unwrap_err(),
        EnvelopeError::ModeMismatch
    );
}

#[test]
fn freshness_window() {
    let mut f = fixture(1);
    let env = create_initial_envelope(&f.peers[0], None, &f.codec, &[1.0], 2, 100_000, &mut f.rng)
        .unwrap();
    assert!(env.is_fresh(100_000, 60_000));
    assert!(env.is_fresh(160_000, 60_000));
    assert!(!env.is_fresh(160_001, 60_000));
    assert!(!env.is_fresh(39_999, 60_000));
}

#[test]
fn addresses_and_ids_round_trip_through_text() {
    let a = PeerAddress::from_index(42);
    assert_eq!(a.index(), 42);
    assert_ne!(a, PeerAddress::from_index(43));
    assert_eq!(a.to_string().parse::<PeerAddress>().unwrap(), a);
    let json = serde_json::to_string(&a).unwrap();
    assert_eq!(serde_json::from_str::<PeerAddress>(&json).unwrap(), a);
    let id = SynergyId::derive(b"pk", 1);
    assert_ne!(id, SynergyId::derive(b"pk", 2));
    assert_eq!(id.to_string().parse::<SynergyId>().unwrap(), id);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

    #[test]
    fn plaintext_chain_invariants(
        sizes in 3usize..=10,
        seed in proptest::prelude::any::<u64>(),
    ) {
        let mut f = fixture(sizes);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let weights: Vec<Vec<f64>> = (0..sizes)
            .map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let envs = chain(&mut f, &weights, false);
        for pair in envs.windows(2) {
            proptest::prop_assert_eq!(pair[1].participants().len(), pair[0].participants().len() + 1);
            proptest::prop_assert!(pair[1].verify_signature());
        }
        let mut mutated = envs.last().unwrap().clone();
        mutated.timestamp_ms += 1;
        proptest::prop_assert!(!mutated.verify_signature());
    }
}
