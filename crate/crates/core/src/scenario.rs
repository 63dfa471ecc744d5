//! Scenario files: the federation topology, providers, consumer requests,
//! churn schedule and run settings, stored as TOML.
//!
//! ```toml
//! resource_types = ["cpu", "storage"]
//!
//! [settings]
//! event_budget = 1000000   # FEDSIM_EVENT_BUDGET overrides this from the CLI
//! default_delay = 1
//! hold_timeout = 50
//! max_rejects = 3
//! delay_jitter = 0         # extra uniform delay in [0, jitter] drawn from the run seed
//! # max_mig defaults to the broker count minus one
//!
//! [pricing]
//! alpha = 1.0
//! lambda = 0.3
//! w_cost = 0.5
//! w_time = 0.5
//! p_mode = "lease-duration"   # or "constant-one"
//!
//! [criteria]
//! extra = []                  # e.g. ["inverse-provider-count"]
//!
//! [[brokers]]
//! id = 0
//! neighbors = [1]
//! visibility = [0]            # provider ids this broker can see
//!
//! [[providers]]
//! id = 0
//! capacity = { cpu = 8 }
//! prices = { cpu = 2.0 }
//!
//! [[consumers]]
//! id = 0
//! broker = 0
//! [[consumers.requests]]
//! issue = 0
//! est = 0
//! dlt = 10
//! pl = 50.0
//! task_duration = 5
//! bundle = { cpu = 2 }
//!
//! [[churn]]
//! time = 30
//! leave = 0                   # or a `[churn.join]` table holding a provider
//!
//! [[delays]]
//! a = "B0"
//! b = "P0"
//! delay = 3
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::DEFAULT_MAX_REJECTS;
use crate::migration::CriteriaConfig;
use crate::model::{validate_request, AgentId, AgentKind, Money, Request, ResourceBundle, ResourceType, Time};
use crate::pricing::{PriceTable, PricingParams};

pub const DEFAULT_EVENT_BUDGET: u64 = 1_000_000;
pub const DEFAULT_HOLD_TIMEOUT: Time = 50;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("{field}: references undeclared {reference}")]
    Dangling { field: String, reference: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), reason: reason.into() }
}

fn dangling(field: impl Into<String>, reference: impl ToString) -> ScenarioError {
    ScenarioError::Dangling { field: field.into(), reference: reference.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_mig: Option<u32>,
    pub event_budget: u64,
    pub default_delay: Time,
    pub hold_timeout: Time,
    pub max_rejects: u32,
    pub delay_jitter: Time,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            max_mig: None,
            event_budget: DEFAULT_EVENT_BUDGET,
            default_delay: 1,
            hold_timeout: DEFAULT_HOLD_TIMEOUT,
            max_rejects: DEFAULT_MAX_REJECTS,
            delay_jitter: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerSpec {
    pub id: u32,
    #[serde(default)]
    pub neighbors: Vec<u32>,
    #[serde(default)]
    pub visibility: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub id: u32,
    pub capacity: BTreeMap<ResourceType, u64>,
    pub prices: PriceTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub issue: Time,
    pub est: Time,
    pub dlt: Time,
    pub pl: Money,
    pub task_duration: Time,
    pub bundle: BTreeMap<ResourceType, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerSpec {
    pub id: u32,
    /// Broker the consumer sends its CFPs to.
    pub broker: u32,
    #[serde(default)]
    pub requests: Vec<RequestSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnSpec {
    pub time: Time,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leave: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join: Option<ProviderSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelaySpec {
    pub a: AgentId,
    pub b: AgentId,
    pub delay: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub resource_types: Vec<ResourceType>,
    #[serde(default)]
    pub settings: Settings,
    #[serde(default)]
    pub pricing: PricingParams,
    #[serde(default)]
    pub criteria: CriteriaConfig,
    #[serde(default)]
    pub brokers: Vec<BrokerSpec>,
    #[serde(default)]
    pub providers: Vec<ProviderSpec>,
    #[serde(default)]
    pub consumers: Vec<ConsumerSpec>,
    #[serde(default)]
    pub churn: Vec<ChurnSpec>,
    #[serde(default)]
    pub delays: Vec<DelaySpec>,
}

/// Parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    Scenario::from_toml_str(&text)
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario values are always representable in TOML")
    }

    pub fn max_mig(&self) -> u32 {
        self.settings.max_mig.unwrap_or_else(|| self.brokers.len().saturating_sub(1) as u32)
    }

    /// The request of `consumers[consumer].requests[seq]` as the consumer issues it.
    pub fn request(&self, consumer: &ConsumerSpec, seq: usize) -> Request {
        let spec = &consumer.requests[seq];
        Request::new(
            AgentId::consumer(consumer.id),
            seq as u32,
            spec.bundle.iter().map(|(r, &q)| (r.clone(), q)).collect::<ResourceBundle>(),
            spec.est,
            spec.dlt,
            spec.pl,
            AgentId::broker(consumer.broker),
        )
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let types: BTreeSet<&ResourceType> = self.resource_types.iter().collect();
        if types.is_empty() {
            return Err(invalid("resource_types", "at least one resource type is required"));
        }
        if types.len() != self.resource_types.len() {
            return Err(invalid("resource_types", "duplicate resource type"));
        }
        if let Some(bad) = self.resource_types.iter().find(|r| !r.is_valid()) {
            return Err(invalid("resource_types", format!("invalid name `{bad}`")));
        }
        self.pricing.validate().map_err(|e| invalid("pricing", e.to_string()))?;
        if self.settings.event_budget == 0 {
            return Err(invalid("settings.event_budget", "must be positive"));
        }

        let broker_ids = unique_ids("brokers", self.brokers.iter().map(|b| b.id))?;
        let mut provider_ids = unique_ids("providers", self.providers.iter().map(|p| p.id))?;
        for (i, p) in self.providers.iter().enumerate() {
            self.check_provider(&format!("providers[{i}]"), p)?;
        }
        for (i, c) in self.churn.iter().enumerate() {
            if let Some(p) = &c.join {
                self.check_provider(&format!("churn[{i}].join"), p)?;
                provider_ids.insert(p.id);
            }
        }

        for (i, b) in self.brokers.iter().enumerate() {
            for &n in &b.neighbors {
                let field = format!("brokers[{i}].neighbors");
                if n == b.id {
                    return Err(invalid(field, "a broker cannot neighbor itself"));
                }
                let Some(other) = self.brokers.iter().find(|o| o.id == n) else {
                    return Err(dangling(field, AgentId::broker(n)));
                };
                if !other.neighbors.contains(&b.id) {
                    return Err(invalid(
                        field,
                        format!("edge B{}-B{n} is not symmetric: B{n} does not list B{}", b.id, b.id),
                    ));
                }
            }
            if let Some(&p) = b.visibility.iter().find(|p| !provider_ids.contains(p)) {
                return Err(dangling(format!("brokers[{i}].visibility"), AgentId::provider(p)));
            }
        }

        unique_ids("consumers", self.consumers.iter().map(|c| c.id))?;
        for (i, c) in self.consumers.iter().enumerate() {
            if !broker_ids.contains(&c.broker) {
                return Err(dangling(format!("consumers[{i}].broker"), AgentId::broker(c.broker)));
            }
            for (j, spec) in c.requests.iter().enumerate() {
                let field = format!("consumers[{i}].requests[{j}]");
                if let Some(r) = spec.bundle.keys().find(|r| !types.contains(r)) {
                    return Err(dangling(format!("{field}.bundle"), format!("resource type `{r}`")));
                }
                validate_request(&self.request(c, j)).map_err(|e| invalid(field.clone(), e.to_string()))?;
            }
        }

        self.check_churn()?;

        for (i, d) in self.delays.iter().enumerate() {
            for agent in [d.a, d.b] {
                let known = match agent.kind {
                    AgentKind::Broker => broker_ids.contains(&agent.index),
                    AgentKind::Provider => provider_ids.contains(&agent.index),
                    AgentKind::Consumer => self.consumers.iter().any(|c| c.id == agent.index),
                };
                if !known {
                    return Err(dangling(format!("delays[{i}]"), agent));
                }
            }
        }
        Ok(())
    }

    fn check_provider(&self, field: &str, p: &ProviderSpec) -> Result<(), ScenarioError> {
        if p.capacity.is_empty() {
            return Err(invalid(format!("{field}.capacity"), "provider offers no resources"));
        }
        for (r, &cap) in &p.capacity {
            if !self.resource_types.contains(r) {
                return Err(dangling(format!("{field}.capacity"), format!("resource type `{r}`")));
            }
            if cap == 0 {
                return Err(invalid(format!("{field}.capacity.{r}"), "capacity must be positive"));
            }
        }
        if p.prices.keys().ne(p.capacity.keys()) {
            return Err(invalid(format!("{field}.prices"), "must price exactly the resource types in capacity"));
        }
        if let Some((r, _)) = p.prices.iter().find(|(_, &c)| c < Money::ZERO) {
            return Err(invalid(format!("{field}.prices.{r}"), "unit cost must be non-negative"));
        }
        Ok(())
    }

    /// Replays the churn schedule in time order and checks every leave hits a
    /// live provider and every join introduces a provider that is not live.
    fn check_churn(&self) -> Result<(), ScenarioError> {
        let mut live: BTreeSet<u32> = self.providers.iter().map(|p| p.id).collect();
        let mut order: Vec<usize> = (0..self.churn.len()).collect();
        order.sort_by_key(|&i| self.churn[i].time);
        for i in order {
            let c = &self.churn[i];
            let field = format!("churn[{i}]");
            match (&c.join, c.leave) {
                (Some(p), None) => {
                    if !live.insert(p.id) {
                        return Err(invalid(field, format!("P{} is already live at time {}", p.id, c.time)));
                    }
                }
                (None, Some(id)) => {
                    if !live.remove(&id) {
                        return Err(invalid(field, format!("P{id} is not live at time {}", c.time)));
                    }
                }
                _ => return Err(invalid(field, "exactly one of `join` or `leave` is required")),
            }
        }
        Ok(())
    }
}

fn unique_ids(field: &str, ids: impl Iterator<Item = u32>) -> Result<BTreeSet<u32>, ScenarioError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(invalid(field, format!("duplicate id {id}")));
        }
    }
    Ok(seen)
}
