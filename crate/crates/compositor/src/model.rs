//! Canonical domain types shared by every other module: concepts, QoS
//! vectors, service descriptions, requests, composition plans, cache
//! entries and run metrics, plus validation and the canonical JSON
//! document format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A named data concept. Flat namespace, exact string equality; tokens
/// are restricted to letters, digits, `_`, `-` and `/`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct Concept(String);

impl Concept {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        if !is_token(&name) {
            return Err(ModelError::BadToken(name));
        }
        Ok(Concept(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Concept {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Concept::new(s).map_err(serde::de::Error::custom)
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '/')
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid token {0:?}: tokens are non-empty [A-Za-z0-9_/-]")]
    BadToken(String),
}

/// The five QoS attributes tracked for every service and every plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QosAttr {
    ResponseTimeMs,
    Cost,
    Availability,
    Reliability,
    ThroughputRps,
}

impl QosAttr {
    pub const ALL: [QosAttr; 5] = [
        QosAttr::ResponseTimeMs,
        QosAttr::Cost,
        QosAttr::Availability,
        QosAttr::Reliability,
        QosAttr::ThroughputRps,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            QosAttr::ResponseTimeMs => "response_time_ms",
            QosAttr::Cost => "cost",
            QosAttr::Availability => "availability",
            QosAttr::Reliability => "reliability",
            QosAttr::ThroughputRps => "throughput_rps",
        }
    }

    pub fn from_str(s: &str) -> Option<QosAttr> {
        QosAttr::ALL.iter().copied().find(|a| a.as_str() == s)
    }

    /// Lower raw values are better for response time and cost; higher is
    /// better for the remaining three.
    pub fn lower_is_better(&self) -> bool {
        matches!(self, QosAttr::ResponseTimeMs | QosAttr::Cost)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QoSVector {
    pub response_time_ms: f64,
    pub cost: f64,
    pub availability: f64,
    pub reliability: f64,
    pub throughput_rps: f64,
}

impl QoSVector {
    pub fn get(&self, attr: QosAttr) -> f64 {
        match attr {
            QosAttr::ResponseTimeMs => self.response_time_ms,
            QosAttr::Cost => self.cost,
            QosAttr::Availability => self.availability,
            QosAttr::Reliability => self.reliability,
            QosAttr::ThroughputRps => self.throughput_rps,
        }
    }

    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let finite = |x: f64| x.is_finite();
        if !(finite(self.response_time_ms) && self.response_time_ms >= 0.0) {
            v.push(Violation::new("qos.response_time_ms", "response_time_ms >= 0"));
        }
        if !(finite(self.cost) && self.cost >= 0.0) {
            v.push(Violation::new("qos.cost", "cost >= 0"));
        }
        if !(finite(self.availability) && self.availability > 0.0 && self.availability <= 1.0) {
            v.push(Violation::new("qos.availability", "availability ∉ (0,1]"));
        }
        if !(finite(self.reliability) && self.reliability > 0.0 && self.reliability <= 1.0) {
            v.push(Violation::new("qos.reliability", "reliability ∉ (0,1]"));
        }
        if !(finite(self.throughput_rps) && self.throughput_rps > 0.0) {
            v.push(Violation::new("qos.throughput_rps", "throughput_rps > 0"));
        }
        v
    }
}

/// An attribute value in a functionality annotation or constraint
/// literal: either a real number or a token.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum AttrValue {
    Num(f64),
    Tok(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintOp {
    Le,
    Ge,
    Eq,
    Ne,
}

impl ConstraintOp {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintOp::Le => "<=",
            ConstraintOp::Ge => ">=",
            ConstraintOp::Eq => "=",
            ConstraintOp::Ne => "!=",
        }
    }

    pub fn from_str(s: &str) -> Option<ConstraintOp> {
        match s {
            "<=" => Some(ConstraintOp::Le),
            ">=" => Some(ConstraintOp::Ge),
            "=" => Some(ConstraintOp::Eq),
            "!=" => Some(ConstraintOp::Ne),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub attribute: String,
    pub op: ConstraintOp,
    pub literal: AttrValue,
}

impl Constraint {
    /// Evaluates the constraint against a declared attribute value.
    /// `None` (attribute absent) fails: closed world.
    pub fn holds(&self, declared: Option<&AttrValue>) -> bool {
        let Some(declared) = declared else { return false };
        match (self.op, declared, &self.literal) {
            (ConstraintOp::Le, AttrValue::Num(x), AttrValue::Num(l)) => x <= l,
            (ConstraintOp::Ge, AttrValue::Num(x), AttrValue::Num(l)) => x >= l,
            (ConstraintOp::Eq, x, l) => x == l,
            (ConstraintOp::Ne, x, l) => x != l,
            // ordered comparison against a non-numeric side
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalitySpec {
    pub category: String,
    pub attributes: BTreeMap<String, AttrValue>,
}

impl FunctionalitySpec {
    /// Segment-wise prefix test: `travel/booking` matches category
    /// `travel/booking/flight` but not `travel/bookings`.
    pub fn category_has_prefix(&self, prefix: &str) -> bool {
        category_has_prefix(&self.category, prefix)
    }
}

pub fn category_has_prefix(category: &str, prefix: &str) -> bool {
    let mut cat = category.split('/');
    for want in prefix.split('/') {
        if cat.next() != Some(want) {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceDescription {
    pub id: String,
    pub name: String,
    pub inputs: Vec<Concept>,
    pub outputs: Vec<Concept>,
    pub functionality: FunctionalitySpec,
    pub qos: QoSVector,
    pub endpoint: String,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: &str, rule: &str) -> Self {
        Violation { field: field.into(), rule: rule.into() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks every `ServiceDescription` invariant and reports all
/// violations by field and rule. This is a report, not a failure.
pub fn validate_service(desc: &ServiceDescription) -> Vec<Violation> {
    let mut v = Vec::new();
    if !is_token(&desc.id) {
        v.push(Violation::new("id", "id is a non-empty token"));
    }
    if desc.outputs.is_empty() {
        v.push(Violation::new("outputs", "outputs non-empty"));
    }
    for (field, set) in [("inputs", &desc.inputs), ("outputs", &desc.outputs)] {
        let mut seen = BTreeSet::new();
        for c in set.iter() {
            if !seen.insert(c) {
                v.push(Violation::new(field, "concept set has no duplicates"));
                break;
            }
        }
    }
    if desc.functionality.category.split('/').any(|s| s.is_empty()) {
        v.push(Violation::new("functionality.category", "category segments non-empty"));
    }
    v.extend(desc.qos.violations());
    if !is_token(&desc.endpoint) {
        v.push(Violation::new("endpoint", "endpoint is a non-empty token"));
    }
    v
}

/// Sorts concept sets lexicographically; the attribute map is key-sorted
/// by construction. Idempotent. Rejects invalid descriptions.
pub fn canonicalize(mut desc: ServiceDescription) -> Result<ServiceDescription, Vec<Violation>> {
    let violations = validate_service(&desc);
    if !violations.is_empty() {
        return Err(violations);
    }
    desc.inputs.sort();
    desc.outputs.sort();
    Ok(desc)
}

/// Writes the canonical service document: UTF-8 JSON, keys in schema
/// order, arrays as stored, no insignificant whitespace.
pub fn serialize_service(desc: &ServiceDescription) -> Result<Vec<u8>, Vec<Violation>> {
    let violations = validate_service(desc);
    if !violations.is_empty() {
        return Err(violations);
    }
    Ok(serde_json::to_vec(desc).expect("service serialization is infallible"))
}

#[derive(Debug, Error, PartialEq)]
#[error("PARSE_ERROR at byte {offset}, field {path:?}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub path: String,
    pub message: String,
}

impl ParseError {
    pub fn at(path: &str, message: impl Into<String>) -> Self {
        ParseError { offset: 0, path: path.into(), message: message.into() }
    }
}

pub fn json_from_bytes(bytes: &[u8]) -> Result<serde_json::Value, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError {
        offset: e.valid_up_to(),
        path: String::new(),
        message: "input is not UTF-8".into(),
    })?;
    serde_json::from_str(text).map_err(|e| ParseError {
        offset: offset_of(text, e.line(), e.column()),
        path: String::new(),
        message: e.to_string(),
    })
}

fn offset_of(text: &str, line: usize, column: usize) -> usize {
    let mut off = 0;
    for (n, l) in text.split('\n').enumerate() {
        if n + 1 == line {
            return off + column.saturating_sub(1);
        }
        off += l.len() + 1;
    }
    off
}

pub(crate) struct Obj<'a> {
    map: &'a serde_json::Map<String, serde_json::Value>,
    path: &'a str,
}

impl<'a> Obj<'a> {
    pub fn from(value: &'a serde_json::Value, path: &'a str) -> Result<Self, ParseError> {
        let map = value
            .as_object()
            .ok_or_else(|| ParseError::at(path, "expected a JSON object"))?;
        Ok(Obj { map, path })
    }

    fn child(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{}", self.path, key)
        }
    }

    pub fn require(&self, key: &str) -> Result<&'a serde_json::Value, ParseError> {
        self.map
            .get(key)
            .ok_or_else(|| ParseError::at(&self.child(key), "required field missing"))
    }

    pub fn optional(&self, key: &str) -> Option<&'a serde_json::Value> {
        self.map.get(key)
    }

    pub fn str(&self, key: &str) -> Result<String, ParseError> {
        self.require(key)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ParseError::at(&self.child(key), "expected a string"))
    }

    pub fn num(&self, key: &str) -> Result<f64, ParseError> {
        self.require(key)?
            .as_f64()
            .ok_or_else(|| ParseError::at(&self.child(key), "expected a number"))
    }

    pub fn concepts(&self, key: &str) -> Result<Vec<Concept>, ParseError> {
        let arr = self
            .require(key)?
            .as_array()
            .ok_or_else(|| ParseError::at(&self.child(key), "expected a string array"))?;
        arr.iter()
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| ParseError::at(&self.child(key), "expected a string array"))
                    .and_then(|s| {
                        Concept::new(s).map_err(|e| ParseError::at(&self.child(key), e.to_string()))
                    })
            })
            .collect()
    }

    pub fn reject_unknown(&self, known: &[&str]) -> Result<(), ParseError> {
        for k in self.map.keys() {
            if !known.contains(&k.as_str()) {
                return Err(ParseError::at(&self.child(k), "unknown field"));
            }
        }
        Ok(())
    }
}

pub(crate) fn attr_value(v: &serde_json::Value, path: &str) -> Result<AttrValue, ParseError> {
    match v {
        serde_json::Value::Number(n) => n
            .as_f64()
            .map(AttrValue::Num)
            .ok_or_else(|| ParseError::at(path, "expected a finite number")),
        serde_json::Value::String(s) => Ok(AttrValue::Tok(s.clone())),
        _ => Err(ParseError::at(path, "expected a number or a string")),
    }
}

/// Parses a canonical service document, rejecting unknown fields and any
/// invariant violation.
pub fn parse_service(bytes: &[u8]) -> Result<ServiceDescription, ParseError> {
    let value = json_from_bytes(bytes)?;
    service_from_json(&value)
}

pub fn service_from_json(value: &serde_json::Value) -> Result<ServiceDescription, ParseError> {
    let obj = Obj::from(value, "")?;
    obj.reject_unknown(&[
        "id", "name", "inputs", "outputs", "functionality", "qos", "endpoint", "version",
    ])?;

    let func = Obj::from(obj.require("functionality")?, "functionality")?;
    func.reject_unknown(&["category", "attributes"])?;
    let mut attributes = BTreeMap::new();
    if let Some(attrs) = func.optional("attributes") {
        let map = attrs
            .as_object()
            .ok_or_else(|| ParseError::at("functionality.attributes", "expected an object"))?;
        for (k, v) in map {
            let path = format!("functionality.attributes.{k}");
            if !is_token(k) {
                return Err(ParseError::at(&path, "attribute keys are tokens"));
            }
            attributes.insert(k.clone(), attr_value(v, &path)?);
        }
    }

    let qos_obj = Obj::from(obj.require("qos")?, "qos")?;
    qos_obj.reject_unknown(&[
        "response_time_ms", "cost", "availability", "reliability", "throughput_rps",
    ])?;
    let qos = QoSVector {
        response_time_ms: qos_obj.num("response_time_ms")?,
        cost: qos_obj.num("cost")?,
        availability: qos_obj.num("availability")?,
        reliability: qos_obj.num("reliability")?,
        throughput_rps: qos_obj.num("throughput_rps")?,
    };

    let version = obj.num("version")?;
    if version < 0.0 || version.fract() != 0.0 {
        return Err(ParseError::at("version", "expected a non-negative integer"));
    }

    let desc = ServiceDescription {
        id: obj.str("id")?,
        name: obj.str("name")?,
        inputs: obj.concepts("inputs")?,
        outputs: obj.concepts("outputs")?,
        functionality: FunctionalitySpec {
            category: func.str("category")?,
            attributes,
        },
        qos,
        endpoint: obj.str("endpoint")?,
        version: version as u64,
    };

    if let Some(v) = validate_service(&desc).into_iter().next() {
        return Err(ParseError::at(&v.field, v.rule));
    }
    Ok(desc)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QosBounds {
    pub max_response_time_ms: Option<f64>,
    pub max_cost: Option<f64>,
    pub min_availability: Option<f64>,
    pub min_reliability: Option<f64>,
    pub min_throughput_rps: Option<f64>,
}

impl QosBounds {
    pub fn admits(&self, qos: &QoSVector) -> bool {
        self.max_response_time_ms.map_or(true, |b| qos.response_time_ms <= b)
            && self.max_cost.map_or(true, |b| qos.cost <= b)
            && self.min_availability.map_or(true, |b| qos.availability >= b)
            && self.min_reliability.map_or(true, |b| qos.reliability >= b)
            && self.min_throughput_rps.map_or(true, |b| qos.throughput_rps >= b)
    }

    pub fn is_empty(&self) -> bool {
        *self == QosBounds::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub provided: BTreeSet<Concept>,
    pub desired: BTreeSet<Concept>,
    pub category_requirement: Option<String>,
    pub constraints: Vec<Constraint>,
    pub weights: BTreeMap<QosAttr, f64>,
    pub bounds: QosBounds,
}

impl Request {
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.desired.is_empty() {
            v.push(Violation::new("desired", "desired non-empty"));
        }
        let sum: f64 = self.weights.values().sum();
        if sum.is_nan() || sum <= 0.0 || self.weights.values().any(|w| *w < 0.0 || !w.is_finite()) {
            v.push(Violation::new("weights", "weights non-negative with sum > 0"));
        }
        v
    }

    /// Weights renormalized to sum 1 over all five attributes; absent
    /// attributes weigh zero.
    pub fn normalized_weights(&self) -> BTreeMap<QosAttr, f64> {
        let sum: f64 = self.weights.values().sum();
        QosAttr::ALL
            .iter()
            .map(|a| (*a, self.weights.get(a).copied().unwrap_or(0.0) / sum))
            .collect()
    }
}

/// One endpoint of a data edge in a composition plan.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRef {
    Source,
    Node(String),
    Sink,
}

impl NodeRef {
    pub fn as_json(&self) -> serde_json::Value {
        match self {
            NodeRef::Source => "SOURCE".into(),
            NodeRef::Sink => "SINK".into(),
            NodeRef::Node(id) => id.as_str().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub producer: NodeRef,
    pub consumer: NodeRef,
    pub concept: Concept,
}

/// An acyclic layered composition: nodes, concept-labelled data edges,
/// the topological layer partition and the aggregated QoS vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionPlan {
    pub nodes: Vec<ServiceDescription>,
    pub edges: BTreeSet<Edge>,
    pub layers: Vec<Vec<String>>,
    pub aggregate: QoSVector,
}

impl CompositionPlan {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&ServiceDescription> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Sorted node id list, the plan's identity for dedup and tie-breaks.
    pub fn sorted_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.nodes.iter().map(|n| n.id.clone()).collect();
        ids.sort();
        ids
    }

    /// Canonical plan document: `{nodes, edges, layers, aggregate}` with
    /// nodes as sorted id refs and edges sorted.
    pub fn to_json(&self) -> serde_json::Value {
        let edges: Vec<serde_json::Value> = self
            .edges
            .iter()
            .map(|e| {
                serde_json::Value::Array(vec![
                    e.producer.as_json(),
                    e.consumer.as_json(),
                    e.concept.as_str().into(),
                ])
            })
            .collect();
        serde_json::json!({
            "nodes": self.sorted_ids(),
            "edges": edges,
            "layers": self.layers,
            "aggregate": self.aggregate,
        })
    }
}

/// A WSDB record: the service plus its fetch timestamp and TTL (the
/// aging factor). FRESH at `t` iff `t < fetched_at + ttl_s`, strictly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheEntry {
    pub service: ServiceDescription,
    pub fetched_at: u64,
    pub ttl_s: u64,
}

impl CacheEntry {
    pub fn is_fresh(&self, now: u64) -> bool {
        now < self.fetched_at + self.ttl_s
    }
}

/// Pipeline stage tags, in the order the sequence runs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TranslateIn,
    MatchWsdb,
    MatchRegistry,
    EvaluateInterface,
    EvaluateFunctionality,
    Compose,
    Execute,
    TranslateOut,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::TranslateIn => "TRANSLATE_IN",
            Stage::MatchWsdb => "MATCH_WSDB",
            Stage::MatchRegistry => "MATCH_REGISTRY",
            Stage::EvaluateInterface => "EVALUATE_INTERFACE",
            Stage::EvaluateFunctionality => "EVALUATE_FUNCTIONALITY",
            Stage::Compose => "COMPOSE",
            Stage::Execute => "EXECUTE",
            Stage::TranslateOut => "TRANSLATE_OUT",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    pub wsdb_hits: u64,
    pub registry_fetches: u64,
    pub composition_time_ms: f64,
    pub exposure_time_ms: f64,
    pub event_trace: Vec<Stage>,
}

impl Metrics {
    pub fn trace_strs(&self) -> Vec<&'static str> {
        self.event_trace.iter().map(Stage::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{cat1, concept, service};

    #[test]
    fn cat1_s1_is_valid() {
        let s1 = &cat1()[0];
        assert_eq!(validate_service(s1), Vec::new());
    }

    #[test]
    fn zero_availability_is_reported() {
        let mut s = service("S9", &[], &["X"], 1.0, 1.0, 0.5, 0.5, 1.0);
        s.qos.availability = 0.0;
        let v = validate_service(&s);
        assert!(v.iter().any(|v| v.rule == "availability ∉ (0,1]"), "{v:?}");
    }

    #[test]
    fn empty_outputs_is_reported() {
        let mut s = service("S9", &["A"], &["X"], 1.0, 1.0, 0.5, 0.5, 1.0);
        s.outputs.clear();
        let v = validate_service(&s);
        assert!(v.iter().any(|v| v.rule == "outputs non-empty"), "{v:?}");
    }

    #[test]
    fn canonicalize_sorts_and_is_idempotent() {
        let mut s = service("S9", &[], &["B", "A"], 1.0, 1.0, 0.5, 0.5, 1.0);
        s.inputs = vec![concept("B"), concept("A")];
        let once = canonicalize(s).unwrap();
        assert_eq!(once.inputs, vec![concept("A"), concept("B")]);
        let twice = canonicalize(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn set_order_does_not_affect_canonical_bytes() {
        let a = service("S9", &[], &["A", "B"], 1.0, 1.0, 0.5, 0.5, 1.0);
        let b = service("S9", &[], &["B", "A"], 1.0, 1.0, 0.5, 0.5, 1.0);
        let ca = serialize_service(&canonicalize(a).unwrap()).unwrap();
        let cb = serialize_service(&canonicalize(b).unwrap()).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn round_trip_identity_on_cat1() {
        for s in cat1() {
            let bytes = serialize_service(&s).unwrap();
            assert_eq!(parse_service(&bytes).unwrap(), s);
        }
    }

    #[test]
    fn missing_id_is_a_parse_error_at_id() {
        let bytes = serialize_service(&cat1()[0]).unwrap();
        let mut doc: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        doc.as_object_mut().unwrap().remove("id");
        let err = parse_service(doc.to_string().as_bytes()).unwrap_err();
        assert_eq!(err.path, "id");
    }

    #[test]
    fn out_of_range_availability_is_a_parse_error() {
        let bytes = serialize_service(&cat1()[0]).unwrap();
        let mut doc: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        doc["qos"]["availability"] = serde_json::json!(1.5);
        let err = parse_service(doc.to_string().as_bytes()).unwrap_err();
        assert_eq!(err.message, "availability ∉ (0,1]");
    }

    #[test]
    fn syntax_error_reports_byte_offset() {
        let err = parse_service(b"{\"id\": }").unwrap_err();
        assert_eq!(err.offset, 7);
    }

    #[test]
    fn freshness_boundary_is_strict() {
        let entry = CacheEntry { service: cat1()[0].clone(), fetched_at: 100, ttl_s: 60 };
        assert!(entry.is_fresh(159));
        assert!(!entry.is_fresh(160));
    }

    #[test]
    fn category_prefix_is_segment_wise() {
        assert!(category_has_prefix("travel/booking/flight", "travel/booking"));
        assert!(!category_has_prefix("finance/loan", "travel/booking"));
        assert!(!category_has_prefix("travel/bookings", "travel/booking"));
    }
}
