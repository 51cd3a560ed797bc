//! UDDI-like registry state: provider registration with version gating,
//! conjunctive find queries, and anti-entropy catalog merging between
//! peer registries.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{category_has_prefix, validate_service, Concept, ServiceDescription, Violation};

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryState {
    pub registry_id: String,
    pub catalog: BTreeMap<String, ServiceDescription>,
    pub last_sync_at: u64,
}

impl RegistryState {
    pub fn new(registry_id: impl Into<String>) -> Self {
        RegistryState {
            registry_id: registry_id.into(),
            catalog: BTreeMap::new(),
            last_sync_at: 0,
        }
    }
}

/// Conjunctive query over a catalog; at least one criterion must be set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FindQuery {
    pub output_concept: Option<Concept>,
    pub category_prefix: Option<String>,
    pub id: Option<String>,
}

impl FindQuery {
    pub fn by_output(concept: Concept) -> Self {
        FindQuery { output_concept: Some(concept), ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.output_concept.is_none() && self.category_prefix.is_none() && self.id.is_none()
    }

    pub fn matches(&self, desc: &ServiceDescription) -> bool {
        self.output_concept
            .as_ref()
            .map_or(true, |c| desc.outputs.contains(c))
            && self
                .category_prefix
                .as_ref()
                .map_or(true, |p| category_has_prefix(&desc.functionality.category, p))
            && self.id.as_ref().map_or(true, |id| &desc.id == id)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("VERSION_CONFLICT: id {id} already registered at version {existing}, got {offered}")]
    VersionConflict { id: String, existing: u64, offered: u64 },
    #[error("VALIDATION: {0:?}")]
    Validation(Vec<Violation>),
    #[error("NOT_FOUND: {0}")]
    NotFound(String),
    #[error("QUERY: at least one criterion required")]
    EmptyQuery,
}

/// Inserts or replaces a service. Replacement requires a strictly higher
/// version; equal or lower versions are rejected.
pub fn register(state: &mut RegistryState, desc: ServiceDescription) -> Result<(), RegistryError> {
    let violations = validate_service(&desc);
    if !violations.is_empty() {
        return Err(RegistryError::Validation(violations));
    }
    if let Some(existing) = state.catalog.get(&desc.id) {
        if desc.version <= existing.version {
            return Err(RegistryError::VersionConflict {
                id: desc.id,
                existing: existing.version,
                offered: desc.version,
            });
        }
    }
    state.catalog.insert(desc.id.clone(), desc);
    Ok(())
}

pub fn deregister(state: &mut RegistryState, id: &str) -> Result<(), RegistryError> {
    state
        .catalog
        .remove(id)
        .map(|_| ())
        .ok_or_else(|| RegistryError::NotFound(id.to_string()))
}

/// Returns exactly the catalog entries satisfying every present
/// criterion, sorted by id.
pub fn find(state: &RegistryState, query: &FindQuery) -> Result<Vec<ServiceDescription>, RegistryError> {
    if query.is_empty() {
        return Err(RegistryError::EmptyQuery);
    }
    Ok(state
        .catalog
        .values()
        .filter(|d| query.matches(d))
        .cloned()
        .collect())
}

/// One anti-entropy round between two registries: both end up with the
/// id-wise union, highest version winning, ties broken by the holder's
/// registry_id (lexicographically smaller wins). Commutative and
/// idempotent.
pub fn sync_merge(a: &mut RegistryState, b: &mut RegistryState) {
    let mut merged: BTreeMap<String, ServiceDescription> = BTreeMap::new();
    let (first, second) = if a.registry_id <= b.registry_id { (&a.catalog, &b.catalog) } else { (&b.catalog, &a.catalog) };
    for desc in first.values().chain(second.values()) {
        match merged.get(&desc.id) {
            Some(held) if desc.version <= held.version => {}
            _ => {
                merged.insert(desc.id.clone(), desc.clone());
            }
        }
    }
    a.catalog = merged.clone();
    b.catalog = merged;
}

/// A set of in-process registries synchronizing on the simulated clock:
/// every `sync_interval_s` seconds a full pairwise round runs.
#[derive(Debug, Clone)]
pub struct RegistryCluster {
    pub registries: Vec<RegistryState>,
    pub up: Vec<bool>,
    pub sync_interval_s: u64,
    last_round_at: u64,
}

impl RegistryCluster {
    pub fn new(ids: &[&str], sync_interval_s: u64) -> Self {
        RegistryCluster {
            registries: ids.iter().map(|id| RegistryState::new(*id)).collect(),
            up: vec![true; ids.len()],
            sync_interval_s,
            last_round_at: 0,
        }
    }

    pub fn registry_mut(&mut self, id: &str) -> Option<&mut RegistryState> {
        self.registries.iter_mut().find(|r| r.registry_id == id)
    }

    /// One full pairwise sync round over all UP registries.
    pub fn sync_round(&mut self, now: u64) {
        let n = self.registries.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.up[i] && self.up[j] {
                    let (left, right) = self.registries.split_at_mut(j);
                    sync_merge(&mut left[i], &mut right[0]);
                }
            }
        }
        for (k, r) in self.registries.iter_mut().enumerate() {
            if self.up[k] {
                r.last_sync_at = now;
            }
        }
        self.last_round_at = now;
    }

    /// Runs every sync round due in `(last_round, now]`.
    pub fn advance_to(&mut self, now: u64) {
        while self.last_round_at + self.sync_interval_s <= now {
            let at = self.last_round_at + self.sync_interval_s;
            self.sync_round(at);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{cat1, concept};

    fn s(n: usize) -> ServiceDescription {
        cat1()[n].clone()
    }

    #[test]
    fn register_into_empty() {
        let mut r = RegistryState::new("R1");
        register(&mut r, s(0)).unwrap();
        assert_eq!(r.catalog.len(), 1);
        assert!(r.catalog.contains_key("S1"));
    }

    #[test]
    fn higher_version_replaces() {
        let mut r = RegistryState::new("R1");
        register(&mut r, s(0)).unwrap();
        let mut v2 = s(0);
        v2.version = 2;
        register(&mut r, v2).unwrap();
        assert_eq!(r.catalog["S1"].version, 2);
    }

    #[test]
    fn lower_version_is_a_conflict() {
        let mut r = RegistryState::new("R1");
        let mut v2 = s(0);
        v2.version = 2;
        register(&mut r, v2).unwrap();
        let err = register(&mut r, s(0)).unwrap_err();
        assert!(matches!(err, RegistryError::VersionConflict { .. }));
        assert_eq!(r.catalog["S1"].version, 2);
    }

    #[test]
    fn deregister_roundtrip_and_not_found() {
        let mut r = RegistryState::new("R1");
        register(&mut r, s(0)).unwrap();
        register(&mut r, s(1)).unwrap();
        deregister(&mut r, "S1").unwrap();
        assert_eq!(r.catalog.keys().collect::<Vec<_>>(), vec!["S2"]);
        assert_eq!(deregister(&mut r, "Sx").unwrap_err(), RegistryError::NotFound("Sx".into()));
        deregister(&mut r, "S2").unwrap();
        assert!(r.catalog.is_empty());
    }

    #[test]
    fn find_producers_of_c_in_cat1() {
        let mut r = RegistryState::new("R1");
        for d in cat1() {
            register(&mut r, d).unwrap();
        }
        let hits = find(&r, &FindQuery::by_output(concept("C"))).unwrap();
        let ids: Vec<&str> = hits.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["S2", "S3"]);
        assert!(find(&r, &FindQuery::by_output(concept("Z"))).unwrap().is_empty());
    }

    #[test]
    fn find_by_category_prefix() {
        let mut r = RegistryState::new("R1");
        let mut flight = s(0);
        flight.functionality.category = "travel/booking/flight".into();
        let mut loan = s(1);
        loan.functionality.category = "finance/loan".into();
        register(&mut r, flight).unwrap();
        register(&mut r, loan).unwrap();
        let q = FindQuery { category_prefix: Some("travel/booking".into()), ..Default::default() };
        let ids: Vec<String> = find(&r, &q).unwrap().into_iter().map(|d| d.id).collect();
        assert_eq!(ids, vec!["S1"]);
    }

    #[test]
    fn empty_query_is_rejected() {
        let r = RegistryState::new("R1");
        assert_eq!(find(&r, &FindQuery::default()).unwrap_err(), RegistryError::EmptyQuery);
    }

    #[test]
    fn sync_merge_union_latest_wins_idempotent() {
        let mut a = RegistryState::new("RA");
        let mut b = RegistryState::new("RB");
        register(&mut a, s(0)).unwrap();
        register(&mut b, s(1)).unwrap();
        sync_merge(&mut a, &mut b);
        assert_eq!(a.catalog, b.catalog);
        assert_eq!(a.catalog.len(), 2);

        let mut v2 = s(0);
        v2.version = 2;
        a.catalog.insert("S1".into(), v2.clone());
        sync_merge(&mut a, &mut b);
        assert_eq!(b.catalog["S1"].version, 2);

        let snap = (a.clone(), b.clone());
        sync_merge(&mut a, &mut b);
        assert_eq!((a, b), snap);
    }

    #[test]
    fn cluster_sync_round_converges() {
        let mut cluster = RegistryCluster::new(&["R1", "R2", "R3"], 60);
        register(cluster.registry_mut("R1").unwrap(), s(0)).unwrap();
        register(cluster.registry_mut("R3").unwrap(), s(2)).unwrap();
        cluster.advance_to(60);
        let first = cluster.registries[0].catalog.clone();
        assert_eq!(first.len(), 2);
        for r in &cluster.registries {
            assert_eq!(r.catalog, first);
            assert_eq!(r.last_sync_at, 60);
        }
    }
}
