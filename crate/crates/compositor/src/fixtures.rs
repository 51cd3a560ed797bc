//! The canonical demo catalog CAT-1 and small construction helpers,
//! shared by tests, benches and the CLI defaults.

use std::collections::BTreeMap;

use crate::model::{Concept, FunctionalitySpec, QoSVector, ServiceDescription};

pub fn concept(name: &str) -> Concept {
    Concept::new(name).expect("fixture concept token")
}

#[allow(clippy::too_many_arguments)]
pub fn service(
    id: &str,
    inputs: &[&str],
    outputs: &[&str],
    rt: f64,
    cost: f64,
    avail: f64,
    rel: f64,
    thr: f64,
) -> ServiceDescription {
    ServiceDescription {
        id: id.to_string(),
        name: format!("service {id}"),
        inputs: inputs.iter().map(|c| concept(c)).collect(),
        outputs: outputs.iter().map(|c| concept(c)).collect(),
        functionality: FunctionalitySpec {
            category: "general/transform".to_string(),
            attributes: BTreeMap::new(),
        },
        qos: QoSVector {
            response_time_ms: rt,
            cost,
            availability: avail,
            reliability: rel,
            throughput_rps: thr,
        },
        endpoint: format!("sim/{id}"),
        version: 1,
    }
}

/// CAT-1: S1 A→B, S2 B→C, S3 A→C, S4 A→D.
pub fn cat1() -> Vec<ServiceDescription> {
    vec![
        service("S1", &["A"], &["B"], 10.0, 1.0, 0.99, 0.99, 100.0),
        service("S2", &["B"], &["C"], 20.0, 2.0, 0.98, 0.98, 50.0),
        service("S3", &["A"], &["C"], 50.0, 1.0, 0.90, 0.95, 80.0),
        service("S4", &["A"], &["D"], 15.0, 1.0, 0.99, 0.99, 60.0),
    ]
}
