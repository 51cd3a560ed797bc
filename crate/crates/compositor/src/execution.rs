//! Simulated execution of composed plans: value flow over the wired
//! edges, centralized vs decentralized latency models, pre-execution
//! health re-selection and the two benchmark harnesses.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use thiserror::Error;

use crate::composer::compose;
use crate::evaluator::{score_candidates, select_best, DEFAULT_THROUGHPUT_SENTINEL};
use crate::fixtures::service;
use crate::matchmaker::{lookup, RegistryFinder, SearchLimits};
use crate::model::{CompositionPlan, Concept, NodeRef, QosAttr, QosBounds, Request, ServiceDescription};
use crate::registry::{register, RegistryState};
use crate::wsdb::ReplicaSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Centralized,
    Decentralized,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Centralized => "CENTRALIZED",
            Mode::Decentralized => "DECENTRALIZED",
        }
    }
}

pub type Values = BTreeMap<Concept, Value>;
pub type Transfer = Arc<dyn Fn(&Values) -> Values + Send + Sync>;

#[derive(Clone)]
pub struct ServiceBehavior {
    pub transfer: Transfer,
    pub processing_time_ms: f64,
}

/// The simulated world a plan runs in: per-service behaviors, transfer
/// hop costs and the current fault set.
#[derive(Clone, Default)]
pub struct SimEnv {
    pub behaviors: BTreeMap<String, ServiceBehavior>,
    pub edge_cost_ms: f64,
    pub coordinator_overhead_ms: f64,
    pub faults: BTreeSet<String>,
}

pub const DEFAULT_EDGE_COST_MS: f64 = 5.0;

impl SimEnv {
    /// Default behaviors: each output carries a node-id tag wrapping the
    /// consumed values, so value flow stays inspectable; processing time
    /// is the service's advertised response time.
    pub fn for_catalog(catalog: &[ServiceDescription]) -> Self {
        let mut behaviors = BTreeMap::new();
        for desc in catalog {
            behaviors.insert(desc.id.clone(), default_behavior(desc));
        }
        SimEnv {
            behaviors,
            edge_cost_ms: DEFAULT_EDGE_COST_MS,
            coordinator_overhead_ms: 0.0,
            faults: BTreeSet::new(),
        }
    }
}

fn default_behavior(desc: &ServiceDescription) -> ServiceBehavior {
    let id = desc.id.clone();
    let outputs = desc.outputs.clone();
    ServiceBehavior {
        transfer: Arc::new(move |inputs: &Values| {
            let rendered: Vec<String> = inputs
                .iter()
                .map(|(c, v)| format!("{c}={v}"))
                .collect();
            let tag = Value::String(format!("{id}({})", rendered.join(",")));
            outputs.iter().map(|c| (c.clone(), tag.clone())).collect()
        }),
        processing_time_ms: desc.qos.response_time_ms,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeCompletion {
    pub id: String,
    pub finished_at_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    pub outputs: Values,
    pub latency_ms: f64,
    pub mode: Mode,
    pub trace: Vec<NodeCompletion>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("SERVICE_DOWN: {0}")]
    ServiceDown(String),
    #[error("MISSING_INPUT: {0}")]
    MissingInput(String),
    #[error("NO_HEALTHY_PLAN")]
    NoHealthyPlan,
}

fn per_edge_cost(env: &SimEnv, mode: Mode) -> f64 {
    match mode {
        // services exchange data directly
        Mode::Decentralized => env.edge_cost_ms,
        // sender -> coordinator -> receiver
        Mode::Centralized => 2.0 * env.edge_cost_ms + env.coordinator_overhead_ms,
    }
}

fn processing_time(env: &SimEnv, plan: &CompositionPlan, id: &str) -> f64 {
    env.behaviors
        .get(id)
        .map(|b| b.processing_time_ms)
        .unwrap_or_else(|| plan.node(id).map(|n| n.qos.response_time_ms).unwrap_or(0.0))
}

fn has_internode_input(plan: &CompositionPlan, id: &str) -> bool {
    plan.edges.iter().any(|e| {
        matches!(&e.producer, NodeRef::Node(_)) && e.consumer == NodeRef::Node(id.to_string())
    })
}

/// Layer-synchronized latency: one ingress hop, then per layer the
/// slowest (transfer-in + processing) among its nodes, then one egress
/// hop. Inter-node transfers cost one hop decentralized and a relayed
/// double hop plus coordinator overhead centralized.
pub fn simulate_latency(plan: &CompositionPlan, env: &SimEnv, mode: Mode) -> f64 {
    let hop = env.edge_cost_ms;
    let mut total = 2.0 * hop; // ingress + egress
    for layer in &plan.layers {
        let slowest = layer
            .iter()
            .map(|id| {
                let transfer = if has_internode_input(plan, id) {
                    per_edge_cost(env, mode)
                } else {
                    0.0
                };
                transfer + processing_time(env, plan, id)
            })
            .fold(0.0, f64::max);
        total += slowest;
    }
    total
}

/// Per-node completion times under the same layer-synchronized model.
fn completion_times(plan: &CompositionPlan, env: &SimEnv, mode: Mode) -> Vec<NodeCompletion> {
    let mut trace = Vec::new();
    let mut layer_start = env.edge_cost_ms; // after the ingress hop
    for layer in &plan.layers {
        let mut slowest: f64 = 0.0;
        for id in layer {
            let transfer = if has_internode_input(plan, id) {
                per_edge_cost(env, mode)
            } else {
                0.0
            };
            let elapsed = transfer + processing_time(env, plan, id);
            trace.push(NodeCompletion { id: id.clone(), finished_at_ms: layer_start + elapsed });
            slowest = slowest.max(elapsed);
        }
        layer_start += slowest;
    }
    trace
}

/// Runs a composed plan: data flows along the wired edges, every node
/// fires once when its inputs are ready, and the outputs are identical
/// in both modes — the mode only changes latency.
pub fn execute_plan(
    plan: &CompositionPlan,
    inputs: &Values,
    env: &SimEnv,
    mode: Mode,
) -> Result<ExecutionResult, ExecError> {
    for node in &plan.nodes {
        if env.faults.contains(&node.id) {
            return Err(ExecError::ServiceDown(node.id.clone()));
        }
    }

    let mut produced: BTreeMap<String, Values> = BTreeMap::new();
    let value_of = |produced: &BTreeMap<String, Values>, producer: &NodeRef, concept: &Concept| {
        match producer {
            NodeRef::Source => inputs.get(concept).cloned(),
            NodeRef::Node(id) => produced.get(id).and_then(|vals| vals.get(concept).cloned()),
            NodeRef::Sink => None,
        }
    };

    for layer in &plan.layers {
        for id in layer {
            // faults are sampled again at each fire point
            if env.faults.contains(id) {
                return Err(ExecError::ServiceDown(id.clone()));
            }
            let node = plan.node(id).expect("layered node is in the plan");
            let mut node_inputs = Values::new();
            for concept in &node.inputs {
                let edge = plan
                    .edges
                    .iter()
                    .find(|e| e.consumer == NodeRef::Node(id.clone()) && &e.concept == concept)
                    .ok_or_else(|| ExecError::MissingInput(concept.as_str().to_string()))?;
                let value = value_of(&produced, &edge.producer, concept)
                    .ok_or_else(|| ExecError::MissingInput(concept.as_str().to_string()))?;
                node_inputs.insert(concept.clone(), value);
            }
            let behavior = env
                .behaviors
                .get(id)
                .cloned()
                .unwrap_or_else(|| default_behavior(node));
            produced.insert(id.clone(), (behavior.transfer)(&node_inputs));
        }
    }

    let mut outputs = Values::new();
    for edge in &plan.edges {
        if edge.consumer == NodeRef::Sink {
            let value = value_of(&produced, &edge.producer, &edge.concept)
                .ok_or_else(|| ExecError::MissingInput(edge.concept.as_str().to_string()))?;
            outputs.insert(edge.concept.clone(), value);
        }
    }

    Ok(ExecutionResult {
        outputs,
        latency_ms: simulate_latency(plan, env, mode),
        mode,
        trace: completion_times(plan, env, mode),
    })
}

/// Pre-execution re-selection: the winner if all its nodes are up,
/// otherwise the first fallback (sorted by descending score) whose nodes
/// are all up.
pub fn plan_health_check<'a>(
    plan: &'a CompositionPlan,
    env: &SimEnv,
    fallback: impl IntoIterator<Item = &'a CompositionPlan>,
) -> Result<&'a CompositionPlan, ExecError> {
    std::iter::once(plan)
        .chain(fallback)
        .find(|p| p.nodes.iter().all(|n| !env.faults.contains(&n.id)))
        .ok_or(ExecError::NoHealthyPlan)
}

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("sizes and counts must be positive")]
    NonPositive,
    #[error("could not generate a solvable catalog of size {0}")]
    Unsolvable(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub key: usize,
    pub millis: f64,
}

pub fn rows_to_csv(header: &str, rows: &[BenchRow]) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{},{}\n", row.key, row.millis));
    }
    out
}

/// Deterministic random catalog over a small concept pool. The first
/// service always consumes the provided concept, so the closure always
/// grows and a goal can be drawn from it.
pub fn generate_catalog(size: usize, seed: u64) -> (Vec<ServiceDescription>, Request) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(size as u64).wrapping_mul(0x9e3779b9));
    let pool: Vec<String> = (0..(size + 2).min(40)).map(|i| format!("c{i}")).collect();
    for attempt in 0.. {
        let mut catalog = Vec::with_capacity(size);
        for i in 0..size {
            let pick = |rng: &mut ChaCha8Rng, n: usize| -> Vec<&str> {
                let mut chosen = BTreeSet::new();
                for _ in 0..n {
                    chosen.insert(pool[rng.gen_range(0..pool.len())].as_str());
                }
                chosen.into_iter().collect()
            };
            let n_inputs = 1 + rng.gen_range(0..2);
            let mut inputs = pick(&mut rng, n_inputs);
            if i == 0 {
                inputs = vec![pool[0].as_str()];
            }
            let n_outputs = 1 + rng.gen_range(0..2);
            let outputs = pick(&mut rng, n_outputs);
            catalog.push(service(
                &format!("G{i}"),
                &inputs,
                &outputs,
                1.0 + rng.gen_range(0..100) as f64,
                rng.gen_range(0..10) as f64,
                0.9 + rng.gen_range(0..10) as f64 / 100.0,
                0.9 + rng.gen_range(0..10) as f64 / 100.0,
                1.0 + rng.gen_range(0..100) as f64,
            ));
        }
        let provided: BTreeSet<Concept> = [crate::fixtures::concept(&pool[0])].into_iter().collect();
        let closure = crate::matchmaker::forward_closure(&catalog, &provided);
        let mut goals: Vec<&Concept> = closure.iter().filter(|c| !provided.contains(*c)).collect();
        goals.sort();
        if let Some(goal) = goals.first() {
            let request = Request {
                provided,
                desired: [(*goal).clone()].into_iter().collect(),
                category_requirement: None,
                constraints: Vec::new(),
                weights: [(QosAttr::ResponseTimeMs, 1.0)].into_iter().collect(),
                bounds: QosBounds::default(),
            };
            return (catalog, request);
        }
        assert!(attempt < 50, "solvable catalog generation exhausted retries");
    }
    unreachable!()
}

/// Wall-clock timing of the full lookup -> evaluate -> compose pipeline
/// on generated catalogs of the requested sizes. Reports, not
/// assertions.
pub fn bench_composition(
    catalog_sizes: &[usize],
    seed: u64,
    limits: SearchLimits,
) -> Result<Vec<BenchRow>, BenchError> {
    if catalog_sizes.contains(&0) {
        return Err(BenchError::NonPositive);
    }
    let mut rows = Vec::new();
    for &size in catalog_sizes {
        let (catalog, request) = generate_catalog(size, seed);
        let mut registry = RegistryState::new("bench");
        for desc in &catalog {
            register(&mut registry, desc.clone()).expect("generated catalog registers");
        }
        let mut replicas = ReplicaSet::new(1);
        let finders: [&dyn RegistryFinder; 1] = [&registry];

        let start = Instant::now();
        let outcome = lookup(&request, &mut replicas, &finders, 0, limits, 300, DEFAULT_THROUGHPUT_SENTINEL)
            .map_err(|_| BenchError::Unsolvable(size))?;
        let scored = score_candidates(outcome.candidates.plans, &request)
            .map_err(|_| BenchError::Unsolvable(size))?;
        let best = select_best(scored).map_err(|_| BenchError::Unsolvable(size))?;
        compose(&best, &request, DEFAULT_THROUGHPUT_SENTINEL).map_err(|_| BenchError::Unsolvable(size))?;
        let elapsed = start.elapsed().as_secs_f64() * 1000.0;

        rows.push(BenchRow { key: size, millis: elapsed });
    }
    Ok(rows)
}

/// Wall-clock timing of registering N synthetic services into a fresh
/// registry, per count.
pub fn bench_exposure(method_counts: &[usize]) -> Result<Vec<BenchRow>, BenchError> {
    if method_counts.contains(&0) {
        return Err(BenchError::NonPositive);
    }
    let mut rows = Vec::new();
    for &count in method_counts {
        let services: Vec<ServiceDescription> = (0..count)
            .map(|i| service(&format!("M{i}"), &["in"], &["out"], 1.0, 1.0, 0.99, 0.99, 10.0))
            .collect();
        let mut registry = RegistryState::new("expose");
        let start = Instant::now();
        for desc in services {
            register(&mut registry, desc).expect("synthetic service registers");
        }
        let elapsed = start.elapsed().as_secs_f64() * 1000.0;
        rows.push(BenchRow { key: count, millis: elapsed });
    }
    Ok(rows)
}
