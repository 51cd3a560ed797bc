//! A QoS-driven dynamic service composition engine.
//!
//! Requests arrive as desired/provided concept sets; the matching engine
//! resolves them against a TTL-aged replicated service cache (with
//! registry fallback), candidate plans pass interface and functionality
//! evaluation, a weighted-utility selector picks the best plan, and a
//! simulated dataflow engine executes it in centralized or decentralized
//! mode under injectable faults.

pub mod composer;
pub mod evaluator;
pub mod execution;
pub mod fixtures;
pub mod gateway;
pub mod matchmaker;
pub mod model;
pub mod registry;
pub mod server;
pub mod wire;
pub mod wsdb;
