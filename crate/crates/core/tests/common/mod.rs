//! Random scenario generation and independent checks shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use fedsim::engine::{EventRecord, RecordKind};
use fedsim::model::{AgentId, AgentKind, Money, ResourceType, Time};
use fedsim::scenario::{
    BrokerSpec, ChurnSpec, ConsumerSpec, DelaySpec, ProviderSpec, RequestSpec, Scenario, Settings,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TYPES: [&str; 3] = ["cpu", "mem", "disk"];

#[derive(Debug, Clone)]
pub struct Shape {
    pub brokers: usize,
    pub providers: usize,
    pub requests: usize,
    pub churn: (usize, usize),
    /// Probability of each non-tree edge.
    pub extra_edges: f64,
    /// Requests are issued over `[0, horizon)`.
    pub horizon: Time,
    pub jitter: Time,
}

impl Shape {
    pub fn fuzz() -> Self {
        Self { brokers: 5, providers: 15, requests: 30, churn: (0, 5), extra_edges: 0.3, horizon: 200, jitter: 0 }
    }
}

/// Random spanning tree plus extra edges; adjacency lists are symmetric.
pub fn connected_graph(rng: &mut ChaCha8Rng, n: usize, extra: f64) -> Vec<BTreeSet<u32>> {
    let mut adj = vec![BTreeSet::new(); n];
    for i in 1..n {
        let j = rng.gen_range(0..i);
        adj[i].insert(j as u32);
        adj[j].insert(i as u32);
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(extra) {
                adj[i].insert(j as u32);
                adj[j].insert(i as u32);
            }
        }
    }
    adj
}

pub fn is_connected(brokers: &[BrokerSpec]) -> bool {
    let Some(first) = brokers.first() else { return true };
    let mut seen = BTreeSet::from([first.id]);
    let mut stack = vec![first.id];
    while let Some(b) = stack.pop() {
        let spec = brokers.iter().find(|s| s.id == b).unwrap();
        for &n in &spec.neighbors {
            if seen.insert(n) {
                stack.push(n);
            }
        }
    }
    seen.len() == brokers.len()
}

pub fn random_provider(rng: &mut ChaCha8Rng, id: u32) -> ProviderSpec {
    let mut types: Vec<&str> = TYPES.iter().copied().filter(|_| rng.gen_bool(0.6)).collect();
    if types.is_empty() {
        types.push(TYPES.choose(rng).unwrap());
    }
    ProviderSpec {
        id,
        capacity: types.iter().map(|t| (ResourceType::new(*t), rng.gen_range(3..=12))).collect(),
        prices: types.iter().map(|t| (ResourceType::new(*t), Money::from_cents(rng.gen_range(20..=300)))).collect(),
    }
}

pub fn random_request(rng: &mut ChaCha8Rng, issue: Time) -> RequestSpec {
    let mut bundle: BTreeMap<ResourceType, u64> = BTreeMap::new();
    for t in TYPES {
        if rng.gen_bool(0.4) {
            bundle.insert(ResourceType::new(t), rng.gen_range(1..=4));
        }
    }
    if bundle.is_empty() {
        bundle.insert(ResourceType::new(*TYPES.choose(rng).unwrap()), rng.gen_range(1..=4));
    }
    let est = issue + rng.gen_range(1..=6);
    let dlt = est + rng.gen_range(3..=12);
    let units: u64 = bundle.values().sum();
    let pl_cents = (units * (dlt - est)) as f64 * rng.gen_range(40.0..300.0);
    RequestSpec {
        issue,
        est,
        dlt,
        pl: Money::from_cents(pl_cents as i64),
        task_duration: rng.gen_range(1..=(dlt - est) + 2),
        bundle,
    }
}

/// A fully random, valid scenario of the given shape.
pub fn random_scenario(rng: &mut ChaCha8Rng, shape: &Shape) -> Scenario {
    let graph = connected_graph(rng, shape.brokers, shape.extra_edges);
    let mut brokers: Vec<BrokerSpec> = graph
        .iter()
        .enumerate()
        .map(|(i, n)| BrokerSpec { id: i as u32, neighbors: n.iter().copied().collect(), visibility: Vec::new() })
        .collect();
    let providers: Vec<ProviderSpec> = (0..shape.providers as u32).map(|id| random_provider(rng, id)).collect();

    let churn_count = rng.gen_range(shape.churn.0..=shape.churn.1);
    let mut times: Vec<Time> = (0..churn_count).map(|_| rng.gen_range(0..shape.horizon)).collect();
    times.sort();
    let mut live: Vec<u32> = providers.iter().map(|p| p.id).collect();
    let mut next_id = shape.providers as u32;
    let mut churn = Vec::new();
    let mut joined = Vec::new();
    for time in times {
        if rng.gen_bool(0.6) && !live.is_empty() {
            let idx = rng.gen_range(0..live.len());
            churn.push(ChurnSpec { time, leave: Some(live.swap_remove(idx)), join: None });
        } else {
            let spec = random_provider(rng, next_id);
            live.push(next_id);
            joined.push(next_id);
            next_id += 1;
            churn.push(ChurnSpec { time, leave: None, join: Some(spec) });
        }
    }

    for id in (0..shape.providers as u32).chain(joined) {
        let seen_by = rng.gen_range(1..=2);
        for _ in 0..seen_by {
            let b = rng.gen_range(0..brokers.len());
            if !brokers[b].visibility.contains(&id) {
                brokers[b].visibility.push(id);
            }
        }
    }
    for b in &mut brokers {
        b.visibility.sort();
    }

    let consumer_count = shape.requests.div_ceil(3).max(1);
    let mut consumers: Vec<ConsumerSpec> = (0..consumer_count as u32)
        .map(|id| ConsumerSpec { id, broker: rng.gen_range(0..shape.brokers as u32), requests: Vec::new() })
        .collect();
    for i in 0..shape.requests {
        let issue = rng.gen_range(0..shape.horizon);
        consumers[i % consumer_count].requests.push(random_request(rng, issue));
    }

    let mut delays = Vec::new();
    for (i, n) in graph.iter().enumerate() {
        for &j in n.iter().filter(|&&j| j as usize > i) {
            delays.push(DelaySpec { a: AgentId::broker(i as u32), b: AgentId::broker(j), delay: rng.gen_range(0..=3) });
        }
    }

    let scenario = Scenario {
        resource_types: TYPES.iter().map(|t| ResourceType::new(*t)).collect(),
        settings: Settings { delay_jitter: shape.jitter, ..Settings::default() },
        pricing: Default::default(),
        criteria: Default::default(),
        brokers,
        providers,
        consumers,
        churn,
        delays,
    };
    scenario.validate().expect("generated scenario is valid");
    scenario
}

/// Committed usage of every type at every tick of a provider ledger.
pub fn over_capacity_instants(provider: &fedsim::agents::ProviderState) -> usize {
    let committed: Vec<_> = provider.ledger.iter().filter(|r| r.is_committed()).collect();
    let end = committed.iter().map(|r| r.dlt).max().unwrap_or(0);
    let mut violations = 0;
    for t in 0..end {
        for (resource, &cap) in &provider.capacity {
            let used: u64 = committed
                .iter()
                .filter(|r| r.est <= t && t < r.dlt)
                .map(|r| r.bundle.quantity(resource))
                .sum();
            if used > cap {
                violations += 1;
            }
        }
    }
    violations
}

/// Performatives a consumer sent, in trace order.
pub fn consumer_outgoing(trace: &[EventRecord], consumer: AgentId) -> Vec<String> {
    trace
        .iter()
        .filter(|r| r.kind == RecordKind::Deliver && r.from == Some(consumer))
        .map(|r| r.action.clone())
        .collect()
}

/// Parses the `mig=` field out of a CFP digest.
pub fn digest_migrations(digest: &str) -> Option<u32> {
    let start = digest.find("mig=")? + 4;
    let rest = &digest[start..];
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    rest[..end].parse().ok()
}

pub fn is_broker(agent: Option<AgentId>) -> bool {
    agent.is_some_and(|a| a.kind == AgentKind::Broker)
}
