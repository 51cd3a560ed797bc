//! The replicated Web Services Database: a TTL-aged cache of service
//! descriptions with ordered failover reads, best-effort fan-out writes
//! and anti-entropy repair between replicas.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use crate::model::{service_from_json, CacheEntry, ParseError, ServiceDescription};
use crate::registry::FindQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Health {
    Up,
    Down,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replica {
    pub entries: BTreeMap<String, CacheEntry>,
}

#[derive(Debug, Clone)]
pub struct ReplicaSet {
    pub replicas: Vec<Replica>,
    pub health: Vec<Health>,
}

#[derive(Debug, Error, PartialEq)]
pub enum WsdbError {
    #[error("REPLICA_DOWN: replica {0}")]
    ReplicaDown(usize),
    #[error("ALL_REPLICAS_DOWN")]
    AllReplicasDown,
}

impl ReplicaSet {
    pub fn new(count: usize) -> Self {
        assert!(count >= 1, "a replica set holds at least one replica");
        ReplicaSet {
            replicas: vec![Replica::default(); count],
            health: vec![Health::Up; count],
        }
    }

    pub fn set_health(&mut self, index: usize, health: Health) {
        self.health[index] = health;
    }

    fn first_up(&self) -> Option<usize> {
        self.health.iter().position(|h| *h == Health::Up)
    }
}

/// Stores entries keyed by service id, overwriting prior entries.
pub fn put(replica: &mut Replica, entries: Vec<CacheEntry>) {
    for entry in entries {
        replica.entries.insert(entry.service.id.clone(), entry);
    }
}

/// Exactly the services whose entries are FRESH at `now` and satisfy the
/// query; STALE entries are never returned. Sorted by id.
pub fn get_fresh(replica: &Replica, query: &FindQuery, now: u64) -> Vec<ServiceDescription> {
    replica
        .entries
        .values()
        .filter(|e| e.is_fresh(now) && query.matches(&e.service))
        .map(|e| e.service.clone())
        .collect()
}

/// All fresh entries regardless of query, for catalog snapshots.
pub fn fresh_snapshot(replica: &Replica, now: u64) -> Vec<ServiceDescription> {
    replica
        .entries
        .values()
        .filter(|e| e.is_fresh(now))
        .map(|e| e.service.clone())
        .collect()
}

/// Drops every STALE entry. Invisible to `get_fresh` at the same `now`.
pub fn evict_expired(replica: &mut Replica, now: u64) {
    replica.entries.retain(|_, e| e.is_fresh(now));
}

/// Reads from the first UP replica in failover order, reporting which
/// replica served the result.
pub fn read_failover(
    set: &ReplicaSet,
    query: &FindQuery,
    now: u64,
) -> Result<(Vec<ServiceDescription>, usize), WsdbError> {
    let idx = set.first_up().ok_or(WsdbError::AllReplicasDown)?;
    Ok((get_fresh(&set.replicas[idx], query, now), idx))
}

/// Fresh catalog snapshot from the first UP replica.
pub fn snapshot_failover(
    set: &ReplicaSet,
    now: u64,
) -> Result<(Vec<ServiceDescription>, usize), WsdbError> {
    let idx = set.first_up().ok_or(WsdbError::AllReplicasDown)?;
    Ok((fresh_snapshot(&set.replicas[idx], now), idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteStatus {
    Accepted,
    Skipped,
}

/// Applies the entries to every UP replica; DOWN replicas are skipped
/// and reported. Succeeds when at least one replica accepted.
pub fn write_all(
    set: &mut ReplicaSet,
    entries: Vec<CacheEntry>,
) -> Result<Vec<WriteStatus>, WsdbError> {
    if set.first_up().is_none() {
        return Err(WsdbError::AllReplicasDown);
    }
    let mut statuses = Vec::with_capacity(set.replicas.len());
    for (i, replica) in set.replicas.iter_mut().enumerate() {
        if set.health[i] == Health::Up {
            put(replica, entries.clone());
            statuses.push(WriteStatus::Accepted);
        } else {
            statuses.push(WriteStatus::Skipped);
        }
    }
    Ok(statuses)
}

/// Anti-entropy repair: every UP replica ends with the id-wise union of
/// all UP replicas, newest `fetched_at` winning. Idempotent; DOWN
/// replicas are left untouched.
pub fn sync_replicas(set: &mut ReplicaSet) {
    let mut merged: BTreeMap<String, CacheEntry> = BTreeMap::new();
    for (i, replica) in set.replicas.iter().enumerate() {
        if set.health[i] != Health::Up {
            continue;
        }
        for entry in replica.entries.values() {
            match merged.get(&entry.service.id) {
                Some(held) if entry.fetched_at <= held.fetched_at => {}
                _ => {
                    merged.insert(entry.service.id.clone(), entry.clone());
                }
            }
        }
    }
    for (i, replica) in set.replicas.iter_mut().enumerate() {
        if set.health[i] == Health::Up {
            replica.entries = merged.clone();
        }
    }
}

fn entry_to_json(entry: &CacheEntry) -> Value {
    serde_json::to_value(entry).expect("cache entry serialization")
}

fn entry_from_json(value: &Value) -> Result<CacheEntry, ParseError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ParseError::at("", "expected a cache entry object"))?;
    let service = service_from_json(
        obj.get("service")
            .ok_or_else(|| ParseError::at("service", "required field missing"))?,
    )?;
    let fetched_at = obj
        .get("fetched_at")
        .and_then(Value::as_u64)
        .ok_or_else(|| ParseError::at("fetched_at", "required unsigned integer"))?;
    let ttl_s = obj
        .get("ttl_s")
        .and_then(Value::as_u64)
        .filter(|t| *t > 0)
        .ok_or_else(|| ParseError::at("ttl_s", "required positive integer"))?;
    Ok(CacheEntry { service, fetched_at, ttl_s })
}

/// Appends entries to an append-only JSONL persistence file.
pub fn append_log(path: &Path, entries: &[CacheEntry]) -> std::io::Result<()> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for entry in entries {
        writeln!(file, "{}", entry_to_json(entry))?;
    }
    Ok(())
}

/// Replays a persistence log into a replica, newest line winning per id.
pub fn replay_log(path: &Path) -> Result<Replica, ParseError> {
    let file = std::fs::File::open(path)
        .map_err(|e| ParseError::at("", format!("cannot open log: {e}")))?;
    let mut replica = Replica::default();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(|e| ParseError::at("", format!("cannot read log: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = crate::model::json_from_bytes(line.as_bytes())?;
        let entry = entry_from_json(&value)?;
        replica.entries.insert(entry.service.id.clone(), entry);
    }
    Ok(replica)
}
