use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use abc_core::builder::DagBuilder;
use abc_core::checkpoint::{is_settled, summarize};
use abc_core::confirm::CertificateSearch;
use abc_core::netsim::World;
use abc_core::scenario::{random_dag, random_sim, DagParams, SimParams};
use abc_core::{Checker, DagStore, Message, MessageId};

fn dag(seed: u64) -> DagBuilder {
    let params = DagParams { max_validators: 4, max_txs: 6, max_acks: 6, ..DagParams::default() };
    random_dag(seed, &params).expect("generator builds valid DAGs")
}

fn double_spent(s: &DagStore, confirmed: &BTreeSet<MessageId>) -> bool {
    s.transactions().filter(|&t| confirmed.contains(&s.entry(t).id)).any(|t| {
        s.tx_inputs(t)
            .iter()
            .any(|&slot| s.outputs()[slot].spenders.iter().any(|&w| w != t && confirmed.contains(&s.entry(w).id)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arrival_order_does_not_matter(seed in 0u64..1_000_000, shuffle in any::<u64>()) {
        let b = dag(seed);
        let full = b.store().unwrap();
        let reference = Checker::default().confirmed_set(&full);
        let mut msgs: Vec<Message> = full.messages().cloned().collect();
        msgs.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let mut s = b.empty_store().unwrap();
        for m in msgs {
            s.ingest(m);
        }
        prop_assert_eq!(s.len(), full.len());
        prop_assert_eq!(Checker::default().confirmed_set(&s), reference);
    }

    #[test]
    fn confirmations_are_never_withdrawn(seed in 0u64..1_000_000) {
        let b = dag(seed);
        let full = b.store().unwrap();
        let mut s = b.empty_store().unwrap();
        let mut checker = Checker::default();
        let mut seen = BTreeSet::new();
        for m in full.messages() {
            s.ingest(m.clone());
            let now = checker.confirmed_set(&s).confirmed;
            prop_assert!(seen.is_subset(&now));
            seen = now;
        }
    }

    #[test]
    fn certificates_verify_on_their_own_past(seed in 0u64..1_000_000) {
        let b = dag(seed);
        let full = b.store().unwrap();
        let mut checker = Checker::default();
        for t in full.transactions() {
            let id = full.entry(t).id;
            let CertificateSearch::Found(cert) = checker.find_certificate(&full, &id).unwrap() else { continue };
            let roots: Vec<MessageId> = cert.acks.iter().chain(&cert.support).copied().collect();
            let past = full.past(&roots).unwrap();
            let mut local = b.empty_store().unwrap();
            for m in full.messages().filter(|m| past.contains(&m.id())) {
                prop_assert!(local.ingest(m.clone()).is_admitted());
            }
            prop_assert_eq!(Checker::default().verify_certificate(&local, &cert), Ok(()));
        }
    }

    #[test]
    fn settled_summaries_conserve_stake(seed in 0u64..1_000_000, pick in any::<u64>()) {
        let b = dag(seed);
        let full = b.store().unwrap();
        let mut checker = Checker::default();
        prop_assume!(!double_spent(&full, &checker.confirmed_set(&full).confirmed));
        let acks: Vec<MessageId> = full.messages().filter(|m| matches!(m, Message::Ack(_))).map(Message::id).collect();
        prop_assume!(!acks.is_empty());
        let frontier: BTreeSet<MessageId> =
            acks.iter().enumerate().filter(|(i, _)| pick >> (i % 64) & 1 == 1).map(|(_, a)| *a).collect();
        prop_assume!(!frontier.is_empty());
        prop_assume!(is_settled(&full, &mut checker, &frontier) == Ok(true));
        let summary = summarize(&full, &mut checker, &frontier).unwrap();
        prop_assert_eq!(summary.iter().map(|e| e.output.value).sum::<u64>(), full.total_stake());
    }

    #[test]
    fn arbitrary_bytes_never_panic_the_decoder(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        if let Ok(m) = Message::decode(&bytes) {
            prop_assert_eq!(Message::decode(&m.encode()).unwrap(), m);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulations_stay_safe(seed in 0u64..1_000_000) {
        let mut world = World::new(random_sim(seed, &SimParams::default())).unwrap();
        world.run();
        prop_assert!(world.safety().violations.is_empty(), "{:?}", world.safety().violations);
        prop_assert!(!double_spent(world.global_store(), world.confirmed()));
    }
}
