//! Deterministic simulation of broker-mediated resource allocation on an
//! open cloud federation.
//!
//! Consumers submit requests to brokers, brokers negotiate with the
//! providers they can see, and a broker that cannot serve a request hands
//! it to a neighbor chosen by Pareto dominance over workload, delay and
//! optional extra criteria. Providers may join or leave mid-run.

pub mod agents;
pub mod engine;
pub mod metrics;
pub mod migration;
pub mod model;
pub mod pricing;
pub mod report;
pub mod scenario;

pub use engine::{run, run_with_budget, EventRecord, RunOutput, RunStatus, World};
pub use metrics::{compute_metrics, MetricsReport};
pub use report::{emit_report, parse_report, ReportFormat};
pub use scenario::{load_scenario, Scenario, ScenarioError};
