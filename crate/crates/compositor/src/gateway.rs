//! The translator and end-to-end pipeline: external JSON requests in,
//! composed/executed plans out, with stage tracing, counters,
//! configuration and scripted scenarios over the simulated clock.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::composer::compose;
use crate::evaluator::{filter_functionality, filter_interface, score_candidates, select_best, EvalError};
use crate::execution::{execute_plan, Mode, SimEnv, Values};
use crate::matchmaker::{lookup, MatchError, RegistryDown, RegistryFinder, SearchLimits};
use crate::model::{
    service_from_json, AttrValue, Concept, Constraint, ConstraintOp, Metrics, ParseError, QosAttr,
    QosBounds, Request, Stage,
};
use crate::registry::{register, FindQuery, RegistryCluster};
use crate::wsdb::{sync_replicas, Health, ReplicaSet};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub wsdb_ttl_s: u64,
    pub sync_interval_s: u64,
    pub replica_count: usize,
    pub max_depth: usize,
    pub max_services: usize,
    pub exhaustive: bool,
    pub edge_cost_ms: f64,
    pub coordinator_overhead_ms: f64,
    pub throughput_max_rps: f64,
    pub max_frame_bytes: usize,
    pub registry_peers: Vec<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            wsdb_ttl_s: 300,
            sync_interval_s: 60,
            replica_count: 3,
            max_depth: 4,
            max_services: 6,
            exhaustive: false,
            edge_cost_ms: 5.0,
            coordinator_overhead_ms: 0.0,
            throughput_max_rps: 1e9,
            max_frame_bytes: crate::wire::DEFAULT_MAX_FRAME,
            registry_peers: Vec::new(),
        }
    }
}

impl Config {
    pub fn limits(&self) -> SearchLimits {
        SearchLimits {
            max_depth: self.max_depth,
            max_services: self.max_services,
            exhaustive: self.exhaustive,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "wsdb_ttl_s": self.wsdb_ttl_s,
            "sync_interval_s": self.sync_interval_s,
            "replica_count": self.replica_count,
            "max_depth": self.max_depth,
            "max_services": self.max_services,
            "exhaustive": self.exhaustive,
            "edge_cost_ms": self.edge_cost_ms,
            "coordinator_overhead_ms": self.coordinator_overhead_ms,
            "throughput_max_rps": self.throughput_max_rps,
            "max_frame_bytes": self.max_frame_bytes,
            "registry_peers": self.registry_peers,
        })
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("CONFIG_ERROR at {key}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

fn config_err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError { key: key.into(), message: message.into() }
}

/// File values (JSON) overridden by `COMPOSITOR_*` environment entries,
/// with defaults underneath. Unknown file keys are rejected.
pub fn load_config(
    file_text: Option<&str>,
    env: &BTreeMap<String, String>,
) -> Result<Config, ConfigError> {
    let mut config = match file_text {
        None => Config::default(),
        Some(text) if text.trim().is_empty() => Config::default(),
        Some(text) => serde_json::from_str(text)
            .map_err(|e| config_err("<file>", e.to_string()))?,
    };

    let lookup = |name: &str| env.get(&format!("COMPOSITOR_{}", name.to_uppercase()));
    macro_rules! override_from_env {
        ($field:ident, $parse:ty) => {
            if let Some(raw) = lookup(stringify!($field)) {
                config.$field = raw
                    .parse::<$parse>()
                    .map_err(|e| config_err(stringify!($field), format!("{e}")))?;
            }
        };
    }
    override_from_env!(wsdb_ttl_s, u64);
    override_from_env!(sync_interval_s, u64);
    override_from_env!(replica_count, usize);
    override_from_env!(max_depth, usize);
    override_from_env!(max_services, usize);
    override_from_env!(exhaustive, bool);
    override_from_env!(edge_cost_ms, f64);
    override_from_env!(coordinator_overhead_ms, f64);
    override_from_env!(throughput_max_rps, f64);
    override_from_env!(max_frame_bytes, usize);
    if let Some(raw) = lookup("registry_peers") {
        config.registry_peers = raw
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
    }

    for (key, value, positive) in [
        ("wsdb_ttl_s", config.wsdb_ttl_s as f64, true),
        ("sync_interval_s", config.sync_interval_s as f64, true),
        ("replica_count", config.replica_count as f64, true),
        ("max_depth", config.max_depth as f64, true),
        ("max_services", config.max_services as f64, true),
        ("edge_cost_ms", config.edge_cost_ms, false),
        ("coordinator_overhead_ms", config.coordinator_overhead_ms, false),
        ("throughput_max_rps", config.throughput_max_rps, true),
        ("max_frame_bytes", config.max_frame_bytes as f64, true),
    ] {
        if !value.is_finite() || value < 0.0 || (positive && value == 0.0) {
            return Err(config_err(key, "must be positive"));
        }
    }
    Ok(config)
}

pub fn load_config_from(path: Option<&Path>, env: &BTreeMap<String, String>) -> Result<Config, ConfigError> {
    let text = match path {
        None => None,
        Some(p) => Some(
            std::fs::read_to_string(p)
                .map_err(|e| config_err("<file>", format!("cannot read {}: {e}", p.display())))?,
        ),
    };
    load_config(text.as_deref(), env)
}

/// A parsed external request plus its correlation id.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalRequest {
    pub request: Request,
    pub req_id: Option<Value>,
}

/// Schema-checks an external request document. Omitted weights default
/// to equal weight over all five QoS attributes; omitted bounds to none.
pub fn parse_request(text: &str) -> Result<ExternalRequest, ParseError> {
    let value = crate::model::json_from_bytes(text.as_bytes())?;
    parse_request_value(&value)
}

pub fn parse_request_value(value: &Value) -> Result<ExternalRequest, ParseError> {
    let obj = crate::model::Obj::from(value, "")?;
    obj.reject_unknown(&[
        "provided", "desired", "category", "constraints", "weights", "bounds", "req_id",
    ])?;

    let provided: BTreeSet<Concept> = obj.concepts("provided")?.into_iter().collect();
    let desired: BTreeSet<Concept> = obj.concepts("desired")?.into_iter().collect();

    let mut constraints = Vec::new();
    if let Some(list) = obj.optional("constraints") {
        let arr = list
            .as_array()
            .ok_or_else(|| ParseError::at("constraints", "expected an array"))?;
        for (i, c) in arr.iter().enumerate() {
            let path = format!("constraints[{i}]");
            let cobj = crate::model::Obj::from(c, &path)?;
            cobj.reject_unknown(&["attribute", "op", "literal"])?;
            let op_raw = cobj.str("op")?;
            let op = ConstraintOp::from_str(&op_raw)
                .ok_or_else(|| ParseError::at(&format!("{path}.op"), "op is one of <=, >=, =, !="))?;
            let literal = crate::model::attr_value(cobj.require("literal")?, &format!("{path}.literal"))?;
            if matches!(op, ConstraintOp::Le | ConstraintOp::Ge) && !matches!(literal, AttrValue::Num(_)) {
                return Err(ParseError::at(
                    &format!("{path}.literal"),
                    "ordered comparisons require a numeric literal",
                ));
            }
            constraints.push(Constraint { attribute: cobj.str("attribute")?, op, literal });
        }
    }

    let weights: BTreeMap<QosAttr, f64> = match obj.optional("weights") {
        None => QosAttr::ALL.iter().map(|a| (*a, 0.2)).collect(),
        Some(w) => {
            let map = w
                .as_object()
                .ok_or_else(|| ParseError::at("weights", "expected an object"))?;
            let mut weights = BTreeMap::new();
            for (k, v) in map {
                let attr = QosAttr::from_str(k)
                    .ok_or_else(|| ParseError::at(&format!("weights.{k}"), "unknown QoS attribute"))?;
                let w = v
                    .as_f64()
                    .filter(|w| *w >= 0.0 && w.is_finite())
                    .ok_or_else(|| ParseError::at(&format!("weights.{k}"), "expected a non-negative number"))?;
                weights.insert(attr, w);
            }
            weights
        }
    };

    let mut bounds = QosBounds::default();
    if let Some(b) = obj.optional("bounds") {
        let bobj = crate::model::Obj::from(b, "bounds")?;
        bobj.reject_unknown(&[
            "max_response_time_ms", "max_cost", "min_availability", "min_reliability", "min_throughput_rps",
        ])?;
        let get = |key: &str| -> Result<Option<f64>, ParseError> {
            bobj.optional(key)
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| ParseError::at(&format!("bounds.{key}"), "expected a number"))
                })
                .transpose()
        };
        bounds.max_response_time_ms = get("max_response_time_ms")?;
        bounds.max_cost = get("max_cost")?;
        bounds.min_availability = get("min_availability")?;
        bounds.min_reliability = get("min_reliability")?;
        bounds.min_throughput_rps = get("min_throughput_rps")?;
    }

    let request = Request {
        provided,
        desired,
        category_requirement: obj
            .optional("category")
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ParseError::at("category", "expected a string"))
            })
            .transpose()?,
        constraints,
        weights,
        bounds,
    };
    if let Some(v) = request.validate().into_iter().next() {
        return Err(ParseError::at(&v.field, v.rule));
    }
    Ok(ExternalRequest { request, req_id: obj.optional("req_id").cloned() })
}

/// A pipeline error with its wire code and structured detail.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineError {
    pub code: &'static str,
    pub detail: Value,
}

impl PipelineError {
    fn new(code: &'static str, detail: Value) -> Self {
        PipelineError { code, detail }
    }
}

impl From<MatchError> for PipelineError {
    fn from(err: MatchError) -> Self {
        match err {
            MatchError::NoComposition(unreachable) => {
                PipelineError::new("NO_COMPOSITION", json!({ "unreachable": unreachable }))
            }
            MatchError::RegistryUnreachable => {
                PipelineError::new("REGISTRY_UNREACHABLE", json!({}))
            }
            MatchError::Validation(v) => PipelineError::new(
                "VALIDATION",
                json!({ "violations": v.iter().map(|v| v.to_string()).collect::<Vec<_>>() }),
            ),
        }
    }
}

impl From<EvalError> for PipelineError {
    fn from(_: EvalError) -> Self {
        PipelineError::new("NO_FEASIBLE", json!({}))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSuccess {
    pub req_id: Option<Value>,
    pub plan: Value,
    pub aggregate_qos: Value,
    pub outputs: Value,
    pub metrics: Metrics,
}

pub type PipelineResult = Result<PipelineSuccess, (Option<Value>, PipelineError, Metrics)>;

fn metrics_json(metrics: &Metrics) -> Value {
    json!({
        "wsdb_hits": metrics.wsdb_hits,
        "registry_fetches": metrics.registry_fetches,
        "composition_time_ms": metrics.composition_time_ms,
        "exposure_time_ms": metrics.exposure_time_ms,
        "event_trace": metrics.trace_strs(),
    })
}

/// Canonical response document; errors render as `{error, detail}`.
pub fn render_response(result: &PipelineResult) -> String {
    let doc = match result {
        Ok(success) => {
            let mut obj = serde_json::Map::new();
            if let Some(id) = &success.req_id {
                obj.insert("req_id".into(), id.clone());
            }
            obj.insert("plan".into(), success.plan.clone());
            obj.insert("aggregate_qos".into(), success.aggregate_qos.clone());
            obj.insert("outputs".into(), success.outputs.clone());
            obj.insert("metrics".into(), metrics_json(&success.metrics));
            Value::Object(obj)
        }
        Err((req_id, err, metrics)) => {
            let mut obj = serde_json::Map::new();
            if let Some(id) = req_id {
                obj.insert("req_id".into(), id.clone());
            }
            obj.insert("error".into(), err.code.into());
            obj.insert("detail".into(), err.detail.clone());
            obj.insert("metrics".into(), metrics_json(metrics));
            Value::Object(obj)
        }
    };
    doc.to_string()
}

/// Everything a running composition fabric holds: the simulated clock,
/// the WSDB replica set, the registry cluster and the execution world.
pub struct System {
    pub config: Config,
    pub clock: u64,
    pub replicas: ReplicaSet,
    pub cluster: RegistryCluster,
    pub env: SimEnv,
    pub mode: Mode,
    pub metrics: Metrics,
}

struct GatedRegistry<'a> {
    state: &'a crate::registry::RegistryState,
    up: bool,
}

impl RegistryFinder for GatedRegistry<'_> {
    fn find(&self, query: &FindQuery) -> Result<Vec<crate::model::ServiceDescription>, RegistryDown> {
        if !self.up {
            return Err(RegistryDown);
        }
        self.state.find(query)
    }
}

impl System {
    pub fn new(config: Config, registry_ids: &[&str]) -> Self {
        let cluster = RegistryCluster::new(registry_ids, config.sync_interval_s);
        let mut env = SimEnv::default();
        env.edge_cost_ms = config.edge_cost_ms;
        env.coordinator_overhead_ms = config.coordinator_overhead_ms;
        System {
            replicas: ReplicaSet::new(config.replica_count),
            cluster,
            env,
            mode: Mode::Decentralized,
            metrics: Metrics::default(),
            clock: 0,
            config,
        }
    }

    /// Registers a catalog into every registry and installs default
    /// execution behaviors for it.
    pub fn seed_catalog(&mut self, catalog: &[crate::model::ServiceDescription]) {
        for registry in &mut self.cluster.registries {
            for desc in catalog {
                let _ = register(registry, desc.clone());
            }
        }
        let defaults = SimEnv::for_catalog(catalog);
        self.env.behaviors.extend(defaults.behaviors);
    }

    pub fn advance(&mut self, seconds: u64) {
        self.clock += seconds;
        self.cluster.advance_to(self.clock);
    }
}

/// Runs the full sequence: TRANSLATE_IN, WSDB match (registry fallback
/// when needed), the two evaluation stages, composition, execution and
/// TRANSLATE_OUT, tagging each stage in order.
pub fn handle_request(text: &str, system: &mut System, now: u64) -> (String, Metrics) {
    let mut metrics = Metrics::default();
    metrics.event_trace.push(Stage::TranslateIn);

    let external = match parse_request(text) {
        Ok(ext) => ext,
        Err(e) => {
            let err = PipelineError::new(
                "PARSE_ERROR",
                json!({ "offset": e.offset, "path": e.path, "message": e.message }),
            );
            let result: PipelineResult = Err((None, err, metrics.clone()));
            let rendered = render_response(&result);
            system.metrics.event_trace.extend(metrics.event_trace.iter());
            return (rendered, metrics);
        }
    };
    let req_id = external.req_id.clone();
    let request = external.request;

    let outcome = {
        metrics.event_trace.push(Stage::MatchWsdb);
        let finders: Vec<GatedRegistry> = system
            .cluster
            .registries
            .iter()
            .zip(&system.cluster.up)
            .map(|(state, up)| GatedRegistry { state, up: *up })
            .collect();
        let finder_refs: Vec<&dyn RegistryFinder> =
            finders.iter().map(|f| f as &dyn RegistryFinder).collect();
        lookup(
            &request,
            &mut system.replicas,
            &finder_refs,
            now,
            system.config.limits(),
            system.config.wsdb_ttl_s,
            system.config.throughput_max_rps,
        )
    };

    let finish_err = |err: PipelineError, metrics: Metrics, system: &mut System| {
        let result: PipelineResult = Err((req_id.clone(), err, metrics.clone()));
        let rendered = render_response(&result);
        merge_metrics(system, &metrics);
        (rendered, metrics)
    };

    let outcome = match outcome {
        Ok(outcome) => outcome,
        Err(e) => return finish_err(e.into(), metrics, system),
    };
    metrics.wsdb_hits += outcome.wsdb_hits;
    metrics.registry_fetches += outcome.registry_fetches;
    if outcome.registry_fetches > 0 {
        metrics.event_trace.push(Stage::MatchRegistry);
    }

    metrics.event_trace.push(Stage::EvaluateInterface);
    let plans = filter_interface(outcome.candidates.plans, &request);
    metrics.event_trace.push(Stage::EvaluateFunctionality);
    let plans = filter_functionality(plans, &request);

    let scored = match score_candidates(plans, &request) {
        Ok(scored) => scored,
        Err(e) => return finish_err(e.into(), metrics, system),
    };
    let mut ranked = scored;
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| a.plan.nodes.len().cmp(&b.plan.nodes.len()))
            .then_with(|| a.plan.sorted_ids().cmp(&b.plan.sorted_ids()))
    });
    let best = match select_best(ranked.clone()) {
        Ok(best) => best,
        Err(e) => return finish_err(e.into(), metrics, system),
    };

    metrics.event_trace.push(Stage::Compose);
    // pre-execution health re-selection over the ranked candidates
    let healthy = ranked
        .iter()
        .find(|s| s.plan.nodes.iter().all(|n| !system.env.faults.contains(&n.id)));
    let chosen = match healthy {
        Some(s) if s.plan.sorted_ids() == best.plan.sorted_ids() => &best,
        Some(s) => s,
        None => {
            return finish_err(
                PipelineError::new("NO_HEALTHY_PLAN", json!({})),
                metrics,
                system,
            )
        }
    };
    let final_plan = match compose(chosen, &request, system.config.throughput_max_rps) {
        Ok(plan) => plan,
        Err(e) => {
            return finish_err(
                PipelineError::new("COMPOSE_ERROR", json!({ "message": e.to_string() })),
                metrics,
                system,
            )
        }
    };

    metrics.event_trace.push(Stage::Execute);
    let inputs: Values = request
        .provided
        .iter()
        .map(|c| (c.clone(), Value::String(c.as_str().to_string())))
        .collect();
    let executed = match execute_plan(&final_plan, &inputs, &system.env, system.mode) {
        Ok(result) => result,
        Err(e) => {
            return finish_err(
                PipelineError::new("EXECUTION_ERROR", json!({ "message": e.to_string() })),
                metrics,
                system,
            )
        }
    };

    metrics.event_trace.push(Stage::TranslateOut);
    // the pipeline itself runs on the simulated clock; wall time is
    // reserved for the bench harness
    metrics.composition_time_ms = 0.0;
    let outputs: serde_json::Map<String, Value> = executed
        .outputs
        .iter()
        .map(|(c, v)| (c.as_str().to_string(), v.clone()))
        .collect();
    let success = PipelineSuccess {
        req_id,
        plan: final_plan.to_json(),
        aggregate_qos: serde_json::to_value(final_plan.aggregate).expect("qos serializes"),
        outputs: Value::Object(outputs),
        metrics: metrics.clone(),
    };
    let result: PipelineResult = Ok(success);
    let rendered = render_response(&result);
    merge_metrics(system, &metrics);
    (rendered, metrics)
}

fn merge_metrics(system: &mut System, metrics: &Metrics) {
    system.metrics.wsdb_hits += metrics.wsdb_hits;
    system.metrics.registry_fetches += metrics.registry_fetches;
    system.metrics.event_trace.extend(metrics.event_trace.iter());
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("scenario step {index}: {message}")]
    Step { index: usize, message: String },
}

/// Runs a scripted scenario: JSON array of steps
/// `{type: advance|fault|heal|request|sync|register, ...}`. Returns one
/// output line per request step.
pub fn run_scenario(text: &str, system: &mut System) -> Result<Vec<String>, ScenarioError> {
    let value = crate::model::json_from_bytes(text.as_bytes())?;
    let steps = value
        .as_array()
        .ok_or_else(|| ParseError::at("", "expected an array of steps"))?;
    let mut outputs = Vec::new();
    for (index, step) in steps.iter().enumerate() {
        let fail = |message: String| ScenarioError::Step { index, message };
        let kind = step
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| fail("missing step type".into()))?;
        match kind {
            "advance" => {
                let seconds = step
                    .get("seconds")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| fail("advance needs unsigned seconds".into()))?;
                system.advance(seconds);
            }
            "fault" | "heal" => {
                let target = step
                    .get("target")
                    .and_then(Value::as_str)
                    .ok_or_else(|| fail("fault/heal needs a target".into()))?;
                apply_health(system, target, kind == "fault").map_err(fail)?;
            }
            "sync" => {
                let now = system.clock;
                system.cluster.sync_round(now);
                sync_replicas(&mut system.replicas);
            }
            "register" => {
                let registry_id = step
                    .get("registry")
                    .and_then(Value::as_str)
                    .ok_or_else(|| fail("register needs a registry id".into()))?;
                let desc = service_from_json(
                    step.get("service").ok_or_else(|| fail("register needs a service".into()))?,
                )
                .map_err(|e| fail(e.to_string()))?;
                let behaviors = SimEnv::for_catalog(std::slice::from_ref(&desc)).behaviors;
                system.env.behaviors.extend(behaviors);
                let registry = system
                    .cluster
                    .registry_mut(registry_id)
                    .ok_or_else(|| fail(format!("unknown registry {registry_id:?}")))?;
                register(registry, desc).map_err(|e| fail(e.to_string()))?;
            }
            "request" => {
                let body = step
                    .get("body")
                    .ok_or_else(|| fail("request needs a body".into()))?;
                let now = system.clock;
                let (rendered, _) = handle_request(&body.to_string(), system, now);
                outputs.push(rendered);
            }
            other => return Err(fail(format!("unknown step type {other:?}"))),
        }
    }
    Ok(outputs)
}

fn apply_health(system: &mut System, target: &str, down: bool) -> Result<(), String> {
    match target.split_once(':') {
        Some(("replica", idx)) => {
            let idx: usize = idx.parse().map_err(|_| format!("bad replica index {idx:?}"))?;
            if idx >= system.replicas.replicas.len() {
                return Err(format!("replica {idx} out of range"));
            }
            system
                .replicas
                .set_health(idx, if down { Health::Down } else { Health::Up });
            Ok(())
        }
        Some(("service", id)) => {
            if down {
                system.env.faults.insert(id.to_string());
            } else {
                system.env.faults.remove(id);
            }
            Ok(())
        }
        Some(("registry", id)) => {
            let pos = system
                .cluster
                .registries
                .iter()
                .position(|r| r.registry_id == id)
                .ok_or_else(|| format!("unknown registry {id:?}"))?;
            system.cluster.up[pos] = !down;
            Ok(())
        }
        _ => Err(format!("bad target {target:?}: expected replica:N, service:ID or registry:ID")),
    }
}
