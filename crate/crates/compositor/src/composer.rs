//! Assembles node sets into executable layered plans: ASAP layer
//! stratification, deterministic concept-edge wiring, contribution
//! pruning and the canonical plan document.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;
use thiserror::Error;

use crate::evaluator::{aggregate_qos_with, ScoredPlan};
use crate::model::{
    CompositionPlan, Concept, Edge, NodeRef, ParseError, QoSVector, Request, ServiceDescription,
};

#[derive(Debug, Error, PartialEq)]
pub enum ComposeError {
    #[error("CYCLE: nodes {0:?} never become fireable")]
    Cycle(Vec<String>),
    #[error("desired concepts {0:?} are not covered by the plan")]
    DesiredUncovered(Vec<String>),
}

/// ASAP layering: layer k holds exactly the nodes whose inputs are
/// covered by `provided` plus the outputs of layers < k and that are not
/// placeable earlier. Nodes that never become fireable are a cycle (or
/// an uncoverable input) and rejected.
pub fn layer_nodes(
    nodes: &[ServiceDescription],
    provided: &BTreeSet<Concept>,
) -> Result<Vec<Vec<String>>, ComposeError> {
    let mut known: BTreeSet<Concept> = provided.clone();
    let mut remaining: BTreeMap<&str, &ServiceDescription> =
        nodes.iter().map(|n| (n.id.as_str(), n)).collect();
    let mut layers = Vec::new();
    while !remaining.is_empty() {
        let fireable: Vec<String> = remaining
            .values()
            .filter(|n| n.inputs.iter().all(|c| known.contains(c)))
            .map(|n| n.id.clone())
            .collect();
        if fireable.is_empty() {
            return Err(ComposeError::Cycle(
                remaining.keys().map(|k| k.to_string()).collect(),
            ));
        }
        for id in &fireable {
            let node = remaining.remove(id.as_str()).expect("fireable node is remaining");
            known.extend(node.outputs.iter().cloned());
        }
        layers.push(fireable);
    }
    Ok(layers)
}

fn layer_of(layers: &[Vec<String>], id: &str) -> usize {
    layers
        .iter()
        .position(|l| l.iter().any(|n| n == id))
        .expect("node is layered")
}

/// Picks the producer feeding a consumed concept: SOURCE when the
/// request provides it, otherwise the earliest-layer producer, ties
/// broken by smallest id.
fn producer_of(
    concept: &Concept,
    nodes: &[ServiceDescription],
    layers: &[Vec<String>],
    provided: &BTreeSet<Concept>,
) -> Option<NodeRef> {
    if provided.contains(concept) {
        return Some(NodeRef::Source);
    }
    nodes
        .iter()
        .filter(|n| n.outputs.contains(concept))
        .min_by_key(|n| (layer_of(layers, &n.id), n.id.clone()))
        .map(|n| NodeRef::Node(n.id.clone()))
}

fn wire_edges(
    nodes: &[ServiceDescription],
    layers: &[Vec<String>],
    provided: &BTreeSet<Concept>,
    desired: &BTreeSet<Concept>,
) -> BTreeSet<Edge> {
    let mut edges = BTreeSet::new();
    for node in nodes {
        for input in &node.inputs {
            let producer = producer_of(input, nodes, layers, provided)
                .expect("layered plan covers every node input");
            edges.insert(Edge {
                producer,
                consumer: NodeRef::Node(node.id.clone()),
                concept: input.clone(),
            });
        }
    }
    for concept in desired {
        if let Some(producer) = producer_of(concept, nodes, layers, provided) {
            edges.insert(Edge {
                producer,
                consumer: NodeRef::Sink,
                concept: concept.clone(),
            });
        }
    }
    edges
}

/// Builds a full plan (layers, wired edges, aggregate QoS) from a node
/// set. Fails when the set cannot be stratified or leaves a desired
/// concept uncovered.
pub fn build_plan(
    mut nodes: Vec<ServiceDescription>,
    provided: &BTreeSet<Concept>,
    desired: &BTreeSet<Concept>,
    throughput_sentinel: f64,
) -> Result<CompositionPlan, ComposeError> {
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    let layers = layer_nodes(&nodes, provided)?;
    let covered: BTreeSet<&Concept> = provided
        .iter()
        .chain(nodes.iter().flat_map(|n| n.outputs.iter()))
        .collect();
    let missing: Vec<String> = desired
        .iter()
        .filter(|c| !covered.contains(*c))
        .map(|c| c.as_str().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ComposeError::DesiredUncovered(missing));
    }
    let edges = wire_edges(&nodes, &layers, provided, desired);
    let mut plan = CompositionPlan {
        nodes,
        edges,
        layers,
        aggregate: QoSVector {
            response_time_ms: 0.0,
            cost: 0.0,
            availability: 1.0,
            reliability: 1.0,
            throughput_rps: throughput_sentinel,
        },
    };
    plan.aggregate = aggregate_qos_with(&plan, throughput_sentinel);
    Ok(plan)
}

/// Checks the `CompositionPlan` invariants against a request: the layer
/// list partitions the node set, every node's inputs are covered by
/// SOURCE and strictly earlier layers, and every desired concept is
/// covered.
pub fn plan_is_valid(
    plan: &CompositionPlan,
    provided: &BTreeSet<Concept>,
    desired: &BTreeSet<Concept>,
) -> bool {
    let layered: Vec<&String> = plan.layers.iter().flatten().collect();
    let mut ids: Vec<&String> = plan.nodes.iter().map(|n| &n.id).collect();
    let mut layered_sorted = layered.clone();
    ids.sort();
    layered_sorted.sort();
    if ids != layered_sorted || layered.len() != plan.nodes.len() {
        return false;
    }
    let mut known = provided.clone();
    for layer in &plan.layers {
        for id in layer {
            let Some(node) = plan.node(id) else { return false };
            if !node.inputs.iter().all(|c| known.contains(c)) {
                return false;
            }
        }
        for id in layer {
            known.extend(plan.node(id).expect("checked above").outputs.iter().cloned());
        }
    }
    desired.iter().all(|c| known.contains(c))
}

/// Validity of a bare node set: every node eventually fires from
/// `provided` and the desired concepts end up covered. This is the
/// predicate minimality is judged against.
pub fn node_set_is_valid(
    nodes: &[ServiceDescription],
    provided: &BTreeSet<Concept>,
    desired: &BTreeSet<Concept>,
) -> bool {
    match layer_nodes(nodes, provided) {
        Err(_) => false,
        Ok(_) => {
            let covered: BTreeSet<&Concept> = provided
                .iter()
                .chain(nodes.iter().flat_map(|n| n.outputs.iter()))
                .collect();
            desired.iter().all(|c| covered.contains(c))
        }
    }
}

/// Iteratively drops nodes whose outputs feed no desired concept,
/// directly or transitively. Fixed point; the result is still valid.
pub fn prune_plan(
    plan: &CompositionPlan,
    request: &Request,
    throughput_sentinel: f64,
) -> Result<CompositionPlan, ComposeError> {
    let mut needed: BTreeSet<Concept> = request
        .desired
        .difference(&request.provided)
        .cloned()
        .collect();
    let mut kept: BTreeSet<String> = BTreeSet::new();
    loop {
        let mut changed = false;
        for node in &plan.nodes {
            if !kept.contains(&node.id) && node.outputs.iter().any(|c| needed.contains(c)) {
                kept.insert(node.id.clone());
                for input in &node.inputs {
                    if !request.provided.contains(input) {
                        needed.insert(input.clone());
                    }
                }
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let nodes: Vec<ServiceDescription> = plan
        .nodes
        .iter()
        .filter(|n| kept.contains(&n.id))
        .cloned()
        .collect();
    build_plan(nodes, &request.provided, &request.desired, throughput_sentinel)
}

/// Recomputes the layer partition (and rewires edges) for a plan's node
/// set against the given provided concepts.
pub fn layer_plan(
    plan: &CompositionPlan,
    provided: &BTreeSet<Concept>,
    desired: &BTreeSet<Concept>,
    throughput_sentinel: f64,
) -> Result<CompositionPlan, ComposeError> {
    build_plan(plan.nodes.clone(), provided, desired, throughput_sentinel)
}

/// Final assembly of the selected winner: prune, layer, wire, aggregate.
pub fn compose(
    scored_best: &ScoredPlan,
    request: &Request,
    throughput_sentinel: f64,
) -> Result<CompositionPlan, ComposeError> {
    prune_plan(&scored_best.plan, request, throughput_sentinel)
}

/// Reconstructs a plan from its canonical document, resolving node id
/// refs against a catalog.
pub fn plan_from_json(
    value: &Value,
    catalog: &[ServiceDescription],
) -> Result<CompositionPlan, ParseError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ParseError::at("", "expected a plan object"))?;
    let ids = obj
        .get("nodes")
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::at("nodes", "required id array"))?;
    let mut nodes = Vec::new();
    for id in ids {
        let id = id
            .as_str()
            .ok_or_else(|| ParseError::at("nodes", "node refs are id strings"))?;
        let node = catalog
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| ParseError::at("nodes", format!("unknown service id {id:?}")))?;
        nodes.push(node.clone());
    }

    let node_ref = |v: &Value, path: &str| -> Result<NodeRef, ParseError> {
        match v.as_str() {
            Some("SOURCE") => Ok(NodeRef::Source),
            Some("SINK") => Ok(NodeRef::Sink),
            Some(id) => Ok(NodeRef::Node(id.to_string())),
            None => Err(ParseError::at(path, "expected an id, SOURCE or SINK")),
        }
    };
    let mut edges = BTreeSet::new();
    for (i, e) in obj
        .get("edges")
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::at("edges", "required edge array"))?
        .iter()
        .enumerate()
    {
        let path = format!("edges[{i}]");
        let triple = e
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| ParseError::at(&path, "expected [producer, consumer, concept]"))?;
        let concept = triple[2]
            .as_str()
            .ok_or_else(|| ParseError::at(&path, "concept must be a string"))
            .and_then(|s| Concept::new(s).map_err(|e| ParseError::at(&path, e.to_string())))?;
        edges.insert(Edge {
            producer: node_ref(&triple[0], &path)?,
            consumer: node_ref(&triple[1], &path)?,
            concept,
        });
    }

    let mut layers = Vec::new();
    for (i, layer) in obj
        .get("layers")
        .and_then(Value::as_array)
        .ok_or_else(|| ParseError::at("layers", "required layer array"))?
        .iter()
        .enumerate()
    {
        let ids: Vec<String> = layer
            .as_array()
            .ok_or_else(|| ParseError::at(&format!("layers[{i}]"), "expected an id array"))?
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ParseError::at(&format!("layers[{i}]"), "ids are strings"))
            })
            .collect::<Result<_, _>>()?;
        layers.push(ids);
    }

    let agg = obj
        .get("aggregate")
        .and_then(Value::as_object)
        .ok_or_else(|| ParseError::at("aggregate", "required object"))?;
    let num = |k: &str| -> Result<f64, ParseError> {
        agg.get(k)
            .and_then(Value::as_f64)
            .ok_or_else(|| ParseError::at(&format!("aggregate.{k}"), "expected a number"))
    };
    Ok(CompositionPlan {
        nodes,
        edges,
        layers,
        aggregate: QoSVector {
            response_time_ms: num("response_time_ms")?,
            cost: num("cost")?,
            availability: num("availability")?,
            reliability: num("reliability")?,
            throughput_rps: num("throughput_rps")?,
        },
    })
}
