//! Randomized invariants: canonical serialization, cache staleness and
//! failover, registry sync convergence, evaluator behavior, execution
//! latency dominance and translator totality.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use compositor::composer::build_plan;
use compositor::evaluator::{
    filter_functionality, filter_interface, score_candidates, select_best,
    DEFAULT_THROUGHPUT_SENTINEL,
};
use compositor::execution::{generate_catalog, simulate_latency, Mode, SimEnv};
use compositor::fixtures::{concept, service};
use compositor::gateway::parse_request;
use compositor::matchmaker::{forward_closure, generate_candidates, SearchLimits};
use compositor::model::{
    canonicalize, parse_service, serialize_service, CacheEntry, Concept, QosAttr, QosBounds,
    Request, ServiceDescription,
};
use compositor::registry::{register, sync_merge, RegistryState};
use compositor::wsdb::{
    evict_expired, fresh_snapshot, read_failover, sync_replicas, write_all, Health, ReplicaSet,
};
use compositor::registry::FindQuery;

const SENTINEL: f64 = DEFAULT_THROUGHPUT_SENTINEL;

const POOL: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

fn concepts_from_mask(mask: u8) -> Vec<&'static str> {
    POOL.iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, c)| *c)
        .collect()
}

prop_compose! {
    fn arb_service(tag: usize)(
        in_mask in 1u8..64,
        out_mask in 1u8..64,
        rt in 1.0f64..500.0,
        cost in 0.0f64..20.0,
        avail in 0.5f64..1.0,
        rel in 0.5f64..1.0,
        thr in 1.0f64..200.0,
    ) -> ServiceDescription {
        service(
            &format!("P{tag}"),
            &concepts_from_mask(in_mask),
            &concepts_from_mask(out_mask),
            rt, cost, avail, rel, thr,
        )
    }
}

fn arb_catalog(max: usize) -> impl Strategy<Value = Vec<ServiceDescription>> {
    prop::collection::vec(any::<u8>(), 1..=max).prop_flat_map(|tags| {
        tags.iter()
            .enumerate()
            .map(|(i, _)| arb_service(i))
            .collect::<Vec<_>>()
    })
}

fn arb_request() -> impl Strategy<Value = Request> {
    (1u8..64, 1u8..64, prop::collection::vec(0.0f64..1.0, 5)).prop_map(
        |(prov_mask, des_mask, ws)| {
            let mut weights: BTreeMap<QosAttr, f64> = QosAttr::ALL
                .iter()
                .zip(ws)
                .map(|(a, w)| (*a, (w * 10.0).round() / 10.0))
                .collect();
            if weights.values().all(|w| *w == 0.0) {
                weights.insert(QosAttr::Cost, 1.0);
            }
            Request {
                provided: concepts_from_mask(prov_mask).iter().map(|c| concept(c)).collect(),
                desired: concepts_from_mask(des_mask).iter().map(|c| concept(c)).collect(),
                category_requirement: None,
                constraints: Vec::new(),
                weights,
                bounds: QosBounds::default(),
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_serialization_round_trips(desc in arb_service(0)) {
        let bytes = serialize_service(&desc).unwrap();
        let parsed = parse_service(&bytes).unwrap();
        prop_assert_eq!(&parsed, &desc);
        // canonical form is a fixed point and byte-deterministic
        let canon = canonicalize(parsed).unwrap();
        let again = serialize_service(&canon).unwrap();
        prop_assert_eq!(&again, &bytes);
    }

    #[test]
    fn member_order_never_changes_canonical_bytes(desc in arb_service(0)) {
        let mut shuffled = desc.clone();
        shuffled.inputs.reverse();
        shuffled.outputs.reverse();
        let a = serialize_service(&canonicalize(desc).unwrap()).unwrap();
        let b = serialize_service(&canonicalize(shuffled).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn stale_entries_are_never_served(
        stamps in prop::collection::vec((0u64..200, 1u64..100), 1..8),
        now in 0u64..300,
    ) {
        let mut set = ReplicaSet::new(1);
        let entries: Vec<CacheEntry> = stamps
            .iter()
            .enumerate()
            .map(|(i, (fetched_at, ttl_s))| CacheEntry {
                service: service(&format!("P{i}"), &["A"], &["B"], 1.0, 1.0, 0.9, 0.9, 1.0),
                fetched_at: *fetched_at,
                ttl_s: *ttl_s,
            })
            .collect();
        write_all(&mut set, entries.clone()).unwrap();
        let served: BTreeSet<String> = fresh_snapshot(&set.replicas[0], now)
            .into_iter()
            .map(|d| d.id)
            .collect();
        let expected: BTreeSet<String> = entries
            .iter()
            .filter(|e| now < e.fetched_at + e.ttl_s)
            .map(|e| e.service.id.clone())
            .collect();
        prop_assert_eq!(served, expected);
    }

    #[test]
    fn failover_is_transparent(
        health in prop::collection::vec(any::<bool>(), 3),
        now in 0u64..100,
    ) {
        prop_assume!(health.iter().any(|up| *up));
        let mut set = ReplicaSet::new(3);
        let entries: Vec<CacheEntry> = (0..4)
            .map(|i| CacheEntry {
                service: service(&format!("P{i}"), &["A"], &["B"], 1.0, 1.0, 0.9, 0.9, 1.0),
                fetched_at: 0,
                ttl_s: 1000,
            })
            .collect();
        write_all(&mut set, entries).unwrap();
        let reference = fresh_snapshot(&set.replicas[0], now);
        for (i, up) in health.iter().enumerate() {
            set.set_health(i, if *up { Health::Up } else { Health::Down });
        }
        let (hits, used) = read_failover(&set, &FindQuery::by_output(concept("B")), now).unwrap();
        prop_assert!(health[used]);
        prop_assert_eq!(hits, reference);
    }

    #[test]
    fn eviction_is_invisible_to_readers(
        stamps in prop::collection::vec((0u64..200, 1u64..100), 1..8),
        now in 0u64..300,
    ) {
        let mut set = ReplicaSet::new(1);
        let entries: Vec<CacheEntry> = stamps
            .iter()
            .enumerate()
            .map(|(i, (fetched_at, ttl_s))| CacheEntry {
                service: service(&format!("P{i}"), &["A"], &["B"], 1.0, 1.0, 0.9, 0.9, 1.0),
                fetched_at: *fetched_at,
                ttl_s: *ttl_s,
            })
            .collect();
        write_all(&mut set, entries).unwrap();
        let before = fresh_snapshot(&set.replicas[0], now);
        evict_expired(&mut set.replicas[0], now);
        let after = fresh_snapshot(&set.replicas[0], now);
        prop_assert_eq!(before, after);
    }

    #[test]
    fn replica_sync_repairs_divergence(
        split in prop::collection::vec(0usize..3, 6),
    ) {
        let mut set = ReplicaSet::new(3);
        // scatter entries unevenly by writing with only one replica up
        for (i, target) in split.iter().enumerate() {
            for r in 0..3 {
                set.set_health(r, if r == *target { Health::Up } else { Health::Down });
            }
            let entry = CacheEntry {
                service: service(&format!("P{i}"), &["A"], &["B"], 1.0, 1.0, 0.9, 0.9, 1.0),
                fetched_at: i as u64,
                ttl_s: 1000,
            };
            write_all(&mut set, vec![entry]).unwrap();
        }
        for r in 0..3 {
            set.set_health(r, Health::Up);
        }
        sync_replicas(&mut set);
        let first = set.replicas[0].entries.clone();
        prop_assert_eq!(first.len(), 6);
        for replica in &set.replicas {
            prop_assert_eq!(&replica.entries, &first);
        }
    }

    #[test]
    fn tree_sync_converges(
        parents in prop::collection::vec(0usize..5, 5),
        placements in prop::collection::vec((0usize..6, 1u64..4), 1..10),
    ) {
        // registries 0..=n-1; node k (k >= 1) attaches to parents[k-1] % k,
        // which always yields a connected tree
        let n = parents.len() + 1;
        let mut registries: Vec<RegistryState> =
            (0..n).map(|i| RegistryState::new(format!("R{i}"))).collect();
        for (i, (at, version)) in placements.iter().enumerate() {
            let mut desc = service(&format!("P{i}"), &["A"], &["B"], 1.0, 1.0, 0.9, 0.9, 1.0);
            desc.version = *version;
            let _ = register(&mut registries[*at % n], desc);
        }
        let edges: Vec<(usize, usize)> = (1..n).map(|k| (parents[k - 1] % k, k)).collect();

        let merge = |regs: &mut Vec<RegistryState>, a: usize, b: usize| {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (left, right) = regs.split_at_mut(hi);
            sync_merge(&mut left[lo], &mut right[0]);
        };
        // one round over the tree: gather leaves-to-root, then scatter
        for (parent, child) in edges.iter().rev() {
            merge(&mut registries, *parent, *child);
        }
        for (parent, child) in &edges {
            merge(&mut registries, *parent, *child);
        }
        let first = registries[0].catalog.clone();
        for r in &registries {
            prop_assert_eq!(&r.catalog, &first);
        }
    }

    #[test]
    fn closure_is_monotone(
        catalog in arb_catalog(8),
        prov_a in 1u8..64,
        prov_b in 1u8..64,
    ) {
        let a: BTreeSet<Concept> = concepts_from_mask(prov_a).iter().map(|c| concept(c)).collect();
        let both: BTreeSet<Concept> = concepts_from_mask(prov_a | prov_b)
            .iter()
            .map(|c| concept(c))
            .collect();
        let closure_a = forward_closure(&catalog, &a);
        let closure_both = forward_closure(&catalog, &both);
        prop_assert!(a.is_subset(&closure_a));
        prop_assert!(closure_a.is_subset(&closure_both));
        // adding services never shrinks the closure
        let half = &catalog[..catalog.len() / 2];
        prop_assert!(forward_closure(half, &a).is_subset(&closure_a));
    }

    #[test]
    fn scores_are_bounded_and_filters_commute(
        catalog in arb_catalog(8),
        request in arb_request(),
    ) {
        let plans = match generate_candidates(&catalog, &request, SearchLimits::default(), SENTINEL) {
            Ok(plans) => plans,
            Err(_) => return Ok(()),
        };
        let ab = filter_functionality(filter_interface(plans.clone(), &request), &request);
        let ba = filter_interface(filter_functionality(plans.clone(), &request), &request);
        prop_assert_eq!(&ab, &ba);

        let scored = score_candidates(plans, &request).unwrap();
        for s in &scored {
            prop_assert!(s.score >= -1e-12 && s.score <= 1.0 + 1e-12, "score {}", s.score);
            for u in s.utilities.values() {
                prop_assert!(*u >= -1e-12 && *u <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn selection_is_scale_invariant(
        catalog in arb_catalog(8),
        request in arb_request(),
        shift in 0u32..5,
    ) {
        let plans = match generate_candidates(&catalog, &request, SearchLimits::default(), SENTINEL) {
            Ok(plans) => plans,
            Err(_) => return Ok(()),
        };
        let base = select_best(score_candidates(plans, &request).unwrap()).unwrap();

        // power-of-two scaling of the linear attributes keeps every
        // normalized utility bit-identical
        let k = f64::powi(2.0, shift as i32 - 2);
        let scaled: Vec<ServiceDescription> = catalog
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.qos.response_time_ms *= k;
                d.qos.cost *= k;
                d
            })
            .collect();
        let plans = generate_candidates(&scaled, &request, SearchLimits::default(), SENTINEL).unwrap();
        let best = select_best(score_candidates(plans, &request).unwrap()).unwrap();
        prop_assert_eq!(best.plan.sorted_ids(), base.plan.sorted_ids());
    }

    #[test]
    fn centralized_never_beats_decentralized(
        size in 2usize..8,
        seed in 0u64..500,
        edge_cost in 0.0f64..20.0,
        overhead in 0.0f64..10.0,
    ) {
        let (catalog, request) = generate_catalog(size, seed);
        let plans = match generate_candidates(&catalog, &request, SearchLimits::default(), SENTINEL) {
            Ok(plans) => plans,
            Err(_) => return Ok(()),
        };
        let mut env = SimEnv::for_catalog(&catalog);
        env.edge_cost_ms = edge_cost;
        env.coordinator_overhead_ms = overhead;
        for plan in plans.iter().take(3) {
            let dec = simulate_latency(plan, &env, Mode::Decentralized);
            let cen = simulate_latency(plan, &env, Mode::Centralized);
            prop_assert!(cen >= dec - 1e-9, "cen {cen} vs dec {dec}");
        }
    }

    #[test]
    fn latency_dominates_layer_sum(
        size in 2usize..8,
        seed in 0u64..500,
    ) {
        let (catalog, request) = generate_catalog(size, seed);
        let plans = match generate_candidates(&catalog, &request, SearchLimits::default(), SENTINEL) {
            Ok(plans) => plans,
            Err(_) => return Ok(()),
        };
        let env = SimEnv::for_catalog(&catalog);
        let mut zero = SimEnv::for_catalog(&catalog);
        zero.edge_cost_ms = 0.0;
        for plan in plans.iter().take(3) {
            // latency is bounded below by the pure-processing schedule,
            // which equals the aggregate response time
            let dec = simulate_latency(plan, &env, Mode::Decentralized);
            prop_assert!(dec >= plan.aggregate.response_time_ms - 1e-9);
            let no_transfer = simulate_latency(plan, &zero, Mode::Decentralized);
            prop_assert!((no_transfer - plan.aggregate.response_time_ms).abs() < 1e-9);
        }
    }

    #[test]
    fn parse_request_is_total_on_arbitrary_text(text in "\\PC{0,120}") {
        let _ = parse_request(&text);
    }

    #[test]
    fn parse_request_is_total_on_json_shapes(value in proptest::arbitrary::any::<u64>()) {
        // quick structured fuzz: random JSON assembled from a seed
        let doc = serde_json::json!({
            "provided": [format!("c{}", value % 7)],
            "desired": if value % 3 == 0 { serde_json::json!([]) } else { serde_json::json!(["x"]) },
            "weights": { "cost": (value % 100) as f64 / 10.0 },
            "extra": value,
        });
        let _ = parse_request(&doc.to_string());
    }
}

#[test]
fn thousand_service_round_trip() {
    let (catalog, _) = generate_catalog(1000, 11);
    assert_eq!(catalog.len(), 1000);
    for desc in &catalog {
        let bytes = serialize_service(desc).unwrap();
        let parsed = parse_service(&bytes).unwrap();
        assert_eq!(&parsed, desc);
    }
}

#[test]
fn empty_plan_for_already_satisfied_request() {
    let request = Request {
        provided: [concept("A")].into(),
        desired: [concept("A")].into(),
        category_requirement: None,
        constraints: Vec::new(),
        weights: BTreeMap::from([(QosAttr::Cost, 1.0)]),
        bounds: QosBounds::default(),
    };
    let plans = generate_candidates(&[], &request, SearchLimits::default(), SENTINEL).unwrap();
    assert_eq!(plans.len(), 1);
    assert!(plans[0].is_empty());
    let built = build_plan(Vec::new(), &request.provided, &request.desired, SENTINEL).unwrap();
    assert_eq!(plans[0], built);
}
