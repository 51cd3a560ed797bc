//! Two-stage evaluation: interface-based filtering, functionality-based
//! rule filtering, then structure-based QoS aggregation, min-max utility
//! normalization and best-plan selection.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::composer::plan_is_valid;
use crate::model::{CompositionPlan, QoSVector, QosAttr, Request};

pub const DEFAULT_THROUGHPUT_SENTINEL: f64 = 1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPlan {
    pub plan: CompositionPlan,
    pub utilities: BTreeMap<QosAttr, f64>,
    pub score: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("NO_FEASIBLE: no candidate satisfies the hard bounds")]
    NoFeasible,
}

/// Keeps exactly the plans that are valid compositions for the request:
/// per-layer input coverage, desired coverage, acyclic stratification.
pub fn filter_interface(plans: Vec<CompositionPlan>, request: &Request) -> Vec<CompositionPlan> {
    plans
        .into_iter()
        .filter(|p| plan_is_valid(p, &request.provided, &request.desired))
        .collect()
}

/// A plan survives iff every node's category carries the requested
/// prefix (when one is present) and every request constraint holds on
/// every node, closed-world: a node lacking the constrained attribute
/// fails the constraint.
pub fn filter_functionality(plans: Vec<CompositionPlan>, request: &Request) -> Vec<CompositionPlan> {
    plans
        .into_iter()
        .filter(|p| {
            p.nodes.iter().all(|node| {
                request
                    .category_requirement
                    .as_deref()
                    .map_or(true, |prefix| node.functionality.category_has_prefix(prefix))
                    && request.constraints.iter().all(|c| {
                        c.holds(node.functionality.attributes.get(&c.attribute))
                    })
            })
        })
        .collect()
}

/// Structure-based aggregation over the layer partition: response time
/// sums the per-layer maxima, cost sums, availability and reliability
/// multiply, throughput takes the minimum. The empty plan aggregates to
/// the identity (0, 0, 1, 1, sentinel).
pub fn aggregate_qos_with(plan: &CompositionPlan, throughput_sentinel: f64) -> QoSVector {
    if plan.nodes.is_empty() {
        return QoSVector {
            response_time_ms: 0.0,
            cost: 0.0,
            availability: 1.0,
            reliability: 1.0,
            throughput_rps: throughput_sentinel,
        };
    }
    let node = |id: &String| plan.node(id).expect("layered node is in the plan");
    let response_time_ms = plan
        .layers
        .iter()
        .map(|layer| {
            layer
                .iter()
                .map(|id| node(id).qos.response_time_ms)
                .fold(0.0, f64::max)
        })
        .sum();
    QoSVector {
        response_time_ms,
        cost: plan.nodes.iter().map(|n| n.qos.cost).sum(),
        availability: plan.nodes.iter().map(|n| n.qos.availability).product(),
        reliability: plan.nodes.iter().map(|n| n.qos.reliability).product(),
        throughput_rps: plan
            .nodes
            .iter()
            .map(|n| n.qos.throughput_rps)
            .fold(f64::INFINITY, f64::min),
    }
}

pub fn aggregate_qos(plan: &CompositionPlan) -> QoSVector {
    aggregate_qos_with(plan, DEFAULT_THROUGHPUT_SENTINEL)
}

/// Removes bound violators, min-max normalizes each attribute across the
/// survivors (max = min collapses to utility 1), and scores with the
/// renormalized weights.
pub fn score_candidates(
    plans: Vec<CompositionPlan>,
    request: &Request,
) -> Result<Vec<ScoredPlan>, EvalError> {
    let survivors: Vec<CompositionPlan> = plans
        .into_iter()
        .filter(|p| request.bounds.admits(&p.aggregate))
        .collect();
    if survivors.is_empty() {
        return Err(EvalError::NoFeasible);
    }

    let mut ranges = BTreeMap::new();
    for attr in QosAttr::ALL {
        let values: Vec<f64> = survivors.iter().map(|p| p.aggregate.get(attr)).collect();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ranges.insert(attr, (min, max));
    }

    let weights = request.normalized_weights();
    Ok(survivors
        .into_iter()
        .map(|plan| {
            let utilities: BTreeMap<QosAttr, f64> = QosAttr::ALL
                .iter()
                .map(|attr| {
                    let (min, max) = ranges[attr];
                    let x = plan.aggregate.get(*attr);
                    let u = if max == min {
                        1.0
                    } else if attr.lower_is_better() {
                        (max - x) / (max - min)
                    } else {
                        (x - min) / (max - min)
                    };
                    (*attr, u)
                })
                .collect();
            let score = utilities.iter().map(|(a, u)| weights[a] * u).sum();
            ScoredPlan { plan, utilities, score }
        })
        .collect())
}

/// Maximal score; ties broken by fewer nodes, then by lexicographically
/// smallest sorted id list.
pub fn select_best(scored: Vec<ScoredPlan>) -> Result<ScoredPlan, EvalError> {
    scored
        .into_iter()
        .max_by(|a, b| {
            a.score
                .partial_cmp(&b.score)
                .expect("scores are finite")
                .then_with(|| b.plan.nodes.len().cmp(&a.plan.nodes.len()))
                .then_with(|| b.plan.sorted_ids().cmp(&a.plan.sorted_ids()))
        })
        .ok_or(EvalError::NoFeasible)
}
