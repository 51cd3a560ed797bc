//! The matching engine: interface-based reachability, backward-chaining
//! enumeration of minimal composition plans, and the WSDB-first lookup
//! with registry fallback and aging-factor writeback.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::composer::{build_plan, node_set_is_valid};
use crate::model::{CacheEntry, CompositionPlan, Concept, Request, ServiceDescription, Violation};
use crate::registry::FindQuery;
use crate::wsdb::{read_failover, write_all, ReplicaSet, WsdbError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchLimits {
    pub max_depth: usize,
    pub max_services: usize,
    pub exhaustive: bool,
}

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits { max_depth: 4, max_services: 6, exhaustive: false }
    }
}

impl SearchLimits {
    pub fn exhaustive() -> Self {
        SearchLimits { exhaustive: true, ..Default::default() }
    }
}

// cap on alternative support sets tracked per concept in bounded mode
const BOUNDED_SUPPORT_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Wsdb,
    Registry,
}

#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub plans: Vec<CompositionPlan>,
    pub source: Source,
    pub catalog_snapshot: Vec<ServiceDescription>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("NO_COMPOSITION: unreachable concepts {0:?}")]
    NoComposition(Vec<String>),
    #[error("REGISTRY_UNREACHABLE: all registries down and the WSDB is insufficient")]
    RegistryUnreachable,
    #[error("VALIDATION: {0:?}")]
    Validation(Vec<Violation>),
}

/// Least fixed point of interface reachability: starting from the
/// provided concepts, any service whose inputs are all known contributes
/// its outputs. Terminates in at most |catalog| rounds.
pub fn forward_closure(
    catalog: &[ServiceDescription],
    provided: &BTreeSet<Concept>,
) -> BTreeSet<Concept> {
    let mut known = provided.clone();
    let mut fired = vec![false; catalog.len()];
    loop {
        let mut grew = false;
        for (i, service) in catalog.iter().enumerate() {
            if !fired[i] && service.inputs.iter().all(|c| known.contains(c)) {
                fired[i] = true;
                for c in &service.outputs {
                    known.insert(c.clone());
                }
                grew = true;
            }
        }
        if !grew {
            return known;
        }
    }
}

type NodeSet = BTreeSet<usize>;

struct Search<'a> {
    catalog: &'a [ServiceDescription],
    provided: &'a BTreeSet<Concept>,
    /// producers per concept, ordered smaller-input-set first, then id
    producers: BTreeMap<&'a Concept, Vec<usize>>,
    memo: HashMap<(Concept, Vec<Concept>, usize), Vec<NodeSet>>,
    limits: SearchLimits,
}

impl<'a> Search<'a> {
    fn new(catalog: &'a [ServiceDescription], provided: &'a BTreeSet<Concept>, limits: SearchLimits) -> Self {
        let mut producers: BTreeMap<&Concept, Vec<usize>> = BTreeMap::new();
        for (i, s) in catalog.iter().enumerate() {
            for c in &s.outputs {
                producers.entry(c).or_default().push(i);
            }
        }
        for list in producers.values_mut() {
            list.sort_by(|a, b| {
                catalog[*a]
                    .inputs
                    .len()
                    .cmp(&catalog[*b].inputs.len())
                    .then_with(|| catalog[*a].id.cmp(&catalog[*b].id))
            });
        }
        Search { catalog, provided, producers, memo: HashMap::new(), limits }
    }

    fn cap(&self, mut sets: Vec<NodeSet>) -> Vec<NodeSet> {
        sets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        sets.dedup();
        if !self.limits.exhaustive && sets.len() > BOUNDED_SUPPORT_CAP {
            sets.truncate(BOUNDED_SUPPORT_CAP);
        }
        sets
    }

    /// All node sets able to produce `concept` from the provided
    /// concepts, cutting producer chains that revisit a concept already
    /// on the resolution stack.
    fn supports(&mut self, concept: &Concept, stack: &BTreeSet<Concept>, depth: usize) -> Vec<NodeSet> {
        if self.provided.contains(concept) {
            return vec![NodeSet::new()];
        }
        if depth == 0 || stack.contains(concept) {
            return Vec::new();
        }
        let key = (concept.clone(), stack.iter().cloned().collect::<Vec<_>>(), depth);
        if let Some(hit) = self.memo.get(&key) {
            return hit.clone();
        }

        let mut next_stack = stack.clone();
        next_stack.insert(concept.clone());
        let mut results: Vec<NodeSet> = Vec::new();
        for &producer in self.producers.get(concept).cloned().unwrap_or_default().iter() {
            let mut combos: Vec<NodeSet> = vec![[producer].into_iter().collect()];
            let inputs = self.catalog[producer].inputs.clone();
            for input in &inputs {
                let subs = self.supports(input, &next_stack, depth - 1);
                if subs.is_empty() {
                    combos.clear();
                    break;
                }
                let mut grown = Vec::with_capacity(combos.len() * subs.len());
                for combo in &combos {
                    for sub in &subs {
                        let mut merged = combo.clone();
                        merged.extend(sub.iter().copied());
                        if merged.len() <= self.limits.max_services {
                            grown.push(merged);
                        }
                    }
                }
                combos = self.cap(grown);
                if combos.is_empty() {
                    break;
                }
            }
            results.extend(combos);
        }
        let results = self.cap(results);
        self.memo.insert(key, results.clone());
        results
    }
}

/// All minimal valid plans for the request within the search limits,
/// ordered by node count then by sorted id list. Exhaustive mode removes
/// the depth bound and pruning caps.
pub fn generate_candidates(
    catalog: &[ServiceDescription],
    request: &Request,
    limits: SearchLimits,
    throughput_sentinel: f64,
) -> Result<Vec<CompositionPlan>, MatchError> {
    let violations = request.validate();
    if !violations.is_empty() {
        return Err(MatchError::Validation(violations));
    }

    if request.desired.iter().all(|c| request.provided.contains(c)) {
        let empty = build_plan(Vec::new(), &request.provided, &request.desired, throughput_sentinel)
            .expect("the empty plan is always buildable");
        return Ok(vec![empty]);
    }

    let closure = forward_closure(catalog, &request.provided);
    let unreachable: Vec<String> = request
        .desired
        .iter()
        .filter(|c| !closure.contains(c))
        .map(|c| c.as_str().to_string())
        .collect();
    if !unreachable.is_empty() {
        return Err(MatchError::NoComposition(unreachable));
    }

    let effective = if limits.exhaustive {
        SearchLimits {
            max_depth: catalog.len() + 1,
            max_services: catalog.len(),
            exhaustive: true,
        }
    } else {
        limits
    };

    let mut search = Search::new(catalog, &request.provided, effective);
    let goals: Vec<&Concept> = request
        .desired
        .iter()
        .filter(|c| !request.provided.contains(*c))
        .collect();
    let mut combined: Vec<NodeSet> = vec![NodeSet::new()];
    for goal in goals {
        let subs = search.supports(goal, &BTreeSet::new(), effective.max_depth);
        if subs.is_empty() {
            // reachable by closure but not within the depth bound
            return Err(MatchError::NoComposition(vec![goal.as_str().to_string()]));
        }
        let mut grown = Vec::with_capacity(combined.len() * subs.len());
        for combo in &combined {
            for sub in &subs {
                let mut merged = combo.clone();
                merged.extend(sub.iter().copied());
                if merged.len() <= effective.max_services {
                    grown.push(merged);
                }
            }
        }
        combined = search.cap(grown);
        if combined.is_empty() {
            return Err(MatchError::NoComposition(
                request.desired.iter().map(|c| c.as_str().to_string()).collect(),
            ));
        }
    }

    let to_nodes = |set: &NodeSet| -> Vec<ServiceDescription> {
        set.iter().map(|i| catalog[*i].clone()).collect()
    };
    let mut minimal: Vec<NodeSet> = combined
        .into_iter()
        .filter(|set| {
            let nodes = to_nodes(set);
            if !node_set_is_valid(&nodes, &request.provided, &request.desired) {
                return false;
            }
            set.iter().all(|drop| {
                let rest: Vec<ServiceDescription> = set
                    .iter()
                    .filter(|i| *i != drop)
                    .map(|i| catalog[*i].clone())
                    .collect();
                !node_set_is_valid(&rest, &request.provided, &request.desired)
            })
        })
        .collect();
    minimal.dedup();

    let mut plans: Vec<CompositionPlan> = minimal
        .iter()
        .map(|set| {
            build_plan(to_nodes(set), &request.provided, &request.desired, throughput_sentinel)
                .expect("a valid node set builds a plan")
        })
        .collect();
    plans.sort_by(|a, b| {
        a.nodes
            .len()
            .cmp(&b.nodes.len())
            .then_with(|| a.sorted_ids().cmp(&b.sorted_ids()))
    });
    plans.dedup_by(|a, b| a.sorted_ids() == b.sorted_ids());
    if plans.is_empty() {
        return Err(MatchError::NoComposition(
            request.desired.iter().map(|c| c.as_str().to_string()).collect(),
        ));
    }
    Ok(plans)
}

/// Access to one registry during fallback. `Err(RegistryDown)` marks the
/// registry unreachable for this lookup.
pub trait RegistryFinder {
    fn find(&self, query: &FindQuery) -> Result<Vec<ServiceDescription>, RegistryDown>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistryDown;

impl RegistryFinder for crate::registry::RegistryState {
    fn find(&self, query: &FindQuery) -> Result<Vec<ServiceDescription>, RegistryDown> {
        crate::registry::find(self, query).map_err(|_| RegistryDown)
    }
}

#[derive(Debug)]
pub struct LookupOutcome {
    pub candidates: CandidateSet,
    pub wsdb_hits: u64,
    pub registry_fetches: u64,
    pub replica_used: Option<usize>,
}

/// Backward transitive expansion: query producers of every missing
/// concept, then of their still-missing inputs, bounded by `max_depth`.
fn expand_catalog<E>(
    mut find: impl FnMut(&FindQuery) -> Result<Vec<ServiceDescription>, E>,
    request: &Request,
    max_depth: usize,
) -> Result<Vec<ServiceDescription>, E> {
    let mut fetched: BTreeMap<String, ServiceDescription> = BTreeMap::new();
    let mut queried: BTreeSet<Concept> = BTreeSet::new();
    let mut frontier: BTreeSet<Concept> = request
        .desired
        .iter()
        .filter(|c| !request.provided.contains(*c))
        .cloned()
        .collect();
    for _ in 0..max_depth {
        if frontier.is_empty() {
            break;
        }
        let mut next = BTreeSet::new();
        for concept in &frontier {
            if !queried.insert(concept.clone()) {
                continue;
            }
            for desc in find(&FindQuery::by_output(concept.clone()))? {
                for input in &desc.inputs {
                    if !request.provided.contains(input) && !queried.contains(input) {
                        next.insert(input.clone());
                    }
                }
                match fetched.get(&desc.id) {
                    Some(held) if desc.version <= held.version => {}
                    _ => {
                        fetched.insert(desc.id.clone(), desc);
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(fetched.into_values().collect())
}

/// WSDB-first lookup: fresh cache entries answer the request when they
/// can; otherwise every registry is queried, results are written back to
/// the WSDB with the aging factor, and candidate generation re-runs on
/// the fetched catalog.
pub fn lookup(
    request: &Request,
    replicas: &mut ReplicaSet,
    registries: &[&dyn RegistryFinder],
    now: u64,
    limits: SearchLimits,
    wsdb_ttl_s: u64,
    throughput_sentinel: f64,
) -> Result<LookupOutcome, MatchError> {
    let violations = request.validate();
    if !violations.is_empty() {
        return Err(MatchError::Validation(violations));
    }

    let mut replica_used = None;
    let wsdb_catalog: Option<Vec<ServiceDescription>> = expand_catalog(
        |q| {
            let (hits, used) = read_failover(replicas, q, now)?;
            replica_used = Some(used);
            Ok::<_, WsdbError>(hits)
        },
        request,
        limits.max_depth,
    )
    .ok();

    if let Some(catalog) = &wsdb_catalog {
        if let Ok(plans) = generate_candidates(catalog, request, limits, throughput_sentinel) {
            return Ok(LookupOutcome {
                candidates: CandidateSet {
                    plans,
                    source: Source::Wsdb,
                    catalog_snapshot: catalog.clone(),
                },
                wsdb_hits: 1,
                registry_fetches: 0,
                replica_used,
            });
        }
    }

    // registry fallback: union the per-concept expansions of every
    // reachable registry
    let mut any_reachable = false;
    let mut fetched: BTreeMap<String, ServiceDescription> = BTreeMap::new();
    for registry in registries {
        let expansion = expand_catalog(|q| registry.find(q), request, limits.max_depth);
        if let Ok(services) = expansion {
            any_reachable = true;
            for desc in services {
                match fetched.get(&desc.id) {
                    Some(held) if desc.version <= held.version => {}
                    _ => {
                        fetched.insert(desc.id.clone(), desc);
                    }
                }
            }
        }
    }
    if !any_reachable {
        return Err(MatchError::RegistryUnreachable);
    }

    let entries: Vec<CacheEntry> = fetched
        .values()
        .map(|service| CacheEntry { service: service.clone(), fetched_at: now, ttl_s: wsdb_ttl_s })
        .collect();
    // partial write success is fine; with every replica down the
    // composition still proceeds from the fetched catalog
    let _ = write_all(replicas, entries);

    let mut catalog: BTreeMap<String, ServiceDescription> = fetched;
    for desc in wsdb_catalog.into_iter().flatten() {
        catalog.entry(desc.id.clone()).or_insert(desc);
    }
    let catalog: Vec<ServiceDescription> = catalog.into_values().collect();
    let plans = generate_candidates(&catalog, request, limits, throughput_sentinel)?;
    Ok(LookupOutcome {
        candidates: CandidateSet {
            plans,
            source: Source::Registry,
            catalog_snapshot: catalog,
        },
        wsdb_hits: 0,
        registry_fetches: 1,
        replica_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{cat1, concept};
    use crate::model::{QosAttr, QosBounds};
    use crate::registry::{register, RegistryState};
    use crate::wsdb::Health;

    const SENTINEL: f64 = 1e9;

    fn request(provided: &[&str], desired: &[&str]) -> Request {
        Request {
            provided: provided.iter().map(|c| concept(c)).collect(),
            desired: desired.iter().map(|c| concept(c)).collect(),
            category_requirement: None,
            constraints: Vec::new(),
            weights: [(QosAttr::ResponseTimeMs, 1.0)].into_iter().collect(),
            bounds: QosBounds::default(),
        }
    }

    fn cat1_registry() -> RegistryState {
        let mut r = RegistryState::new("R1");
        for d in cat1() {
            register(&mut r, d).unwrap();
        }
        r
    }

    #[test]
    fn closure_from_a_reaches_everything() {
        let got = forward_closure(&cat1(), &request(&["A"], &["C"]).provided);
        let want: BTreeSet<Concept> = ["A", "B", "C", "D"].iter().map(|c| concept(c)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn closure_from_b_only_fires_s2() {
        let got = forward_closure(&cat1(), &request(&["B"], &["C"]).provided);
        let want: BTreeSet<Concept> = ["B", "C"].iter().map(|c| concept(c)).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn closure_of_nothing_is_nothing() {
        let got = forward_closure(&cat1(), &BTreeSet::new());
        assert!(got.is_empty());
    }

    #[test]
    fn closure_is_monotone_in_provided() {
        let small = forward_closure(&cat1(), &request(&["B"], &["C"]).provided);
        let large = forward_closure(&cat1(), &request(&["A", "B"], &["C"]).provided);
        assert!(small.is_subset(&large));
    }

    #[test]
    fn cat1_a_to_c_yields_exactly_two_minimal_plans() {
        let plans = generate_candidates(
            &cat1(),
            &request(&["A"], &["C"]),
            SearchLimits::exhaustive(),
            SENTINEL,
        )
        .unwrap();
        let ids: Vec<Vec<String>> = plans.iter().map(|p| p.sorted_ids()).collect();
        assert_eq!(ids, vec![vec!["S3".to_string()], vec!["S1".to_string(), "S2".to_string()]]);
    }

    #[test]
    fn identity_request_is_the_empty_plan() {
        let plans = generate_candidates(
            &cat1(),
            &request(&["C"], &["C"]),
            SearchLimits::exhaustive(),
            SENTINEL,
        )
        .unwrap();
        assert_eq!(plans.len(), 1);
        assert!(plans[0].is_empty());
    }

    #[test]
    fn unreachable_goal_is_no_composition() {
        let err = generate_candidates(
            &cat1(),
            &request(&["A"], &["Z"]),
            SearchLimits::exhaustive(),
            SENTINEL,
        )
        .unwrap_err();
        assert_eq!(err, MatchError::NoComposition(vec!["Z".to_string()]));
    }

    #[test]
    fn emitted_plans_are_single_node_minimal() {
        let req = request(&["A"], &["C", "D"]);
        let plans =
            generate_candidates(&cat1(), &req, SearchLimits::exhaustive(), SENTINEL).unwrap();
        assert!(!plans.is_empty());
        for plan in &plans {
            for drop in plan.nodes.iter() {
                let rest: Vec<ServiceDescription> = plan
                    .nodes
                    .iter()
                    .filter(|n| n.id != drop.id)
                    .cloned()
                    .collect();
                assert!(!node_set_is_valid(&rest, &req.provided, &req.desired));
            }
        }
    }

    #[test]
    fn warm_wsdb_lookup_hits_the_cache() {
        let mut replicas = ReplicaSet::new(3);
        let entries: Vec<CacheEntry> = cat1()
            .into_iter()
            .map(|service| CacheEntry { service, fetched_at: 0, ttl_s: 300 })
            .collect();
        write_all(&mut replicas, entries).unwrap();
        let registry = cat1_registry();
        let out = lookup(
            &request(&["A"], &["C"]),
            &mut replicas,
            &[&registry],
            10,
            SearchLimits::exhaustive(),
            300,
            SENTINEL,
        )
        .unwrap();
        assert_eq!(out.candidates.source, Source::Wsdb);
        assert_eq!((out.wsdb_hits, out.registry_fetches), (1, 0));
    }

    #[test]
    fn cold_wsdb_falls_back_and_writes_back() {
        let mut replicas = ReplicaSet::new(3);
        let registry = cat1_registry();
        let out = lookup(
            &request(&["A"], &["C"]),
            &mut replicas,
            &[&registry],
            42,
            SearchLimits::exhaustive(),
            300,
            SENTINEL,
        )
        .unwrap();
        assert_eq!(out.candidates.source, Source::Registry);
        assert_eq!((out.wsdb_hits, out.registry_fetches), (0, 1));
        // transitive per-concept expansion fetches the C producers and
        // S1 for the missing B, stamped with now
        let entry = &replicas.replicas[0].entries["S1"];
        assert_eq!((entry.fetched_at, entry.ttl_s), (42, 300));
        assert!(replicas.replicas[0].entries.contains_key("S2"));
        assert!(replicas.replicas[0].entries.contains_key("S3"));

        // immediately repeating the lookup is WSDB-sourced
        let again = lookup(
            &request(&["A"], &["C"]),
            &mut replicas,
            &[&registry],
            43,
            SearchLimits::exhaustive(),
            300,
            SENTINEL,
        )
        .unwrap();
        assert_eq!(again.candidates.source, Source::Wsdb);
    }

    #[test]
    fn stale_entries_force_the_registry_path() {
        let mut replicas = ReplicaSet::new(1);
        let entries: Vec<CacheEntry> = cat1()
            .into_iter()
            .map(|service| CacheEntry { service, fetched_at: 0, ttl_s: 60 })
            .collect();
        write_all(&mut replicas, entries).unwrap();
        let registry = cat1_registry();
        let out = lookup(
            &request(&["A"], &["C"]),
            &mut replicas,
            &[&registry],
            61,
            SearchLimits::exhaustive(),
            60,
            SENTINEL,
        )
        .unwrap();
        assert_eq!(out.candidates.source, Source::Registry);
        assert_eq!(replicas.replicas[0].entries["S1"].fetched_at, 61);
    }

    #[test]
    fn all_down_everywhere_is_registry_unreachable() {
        let mut replicas = ReplicaSet::new(1);
        replicas.set_health(0, Health::Down);
        struct DownRegistry;
        impl RegistryFinder for DownRegistry {
            fn find(&self, _q: &FindQuery) -> Result<Vec<ServiceDescription>, RegistryDown> {
                Err(RegistryDown)
            }
        }
        let err = lookup(
            &request(&["A"], &["C"]),
            &mut replicas,
            &[&DownRegistry],
            0,
            SearchLimits::exhaustive(),
            60,
            SENTINEL,
        )
        .unwrap_err();
        assert_eq!(err, MatchError::RegistryUnreachable);
    }
}
