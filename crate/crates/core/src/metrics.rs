use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::ConsumerPhase;
use crate::engine::{EventRecord, RecordKind, World};
use crate::model::{AgentId, AgentKind, ConversationId, Money, Performative};
use crate::pricing::total_cost;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrokerLoad {
    pub peak: u64,
    /// Time-weighted mean of in-flight requests over the run.
    pub mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub requests: u64,
    pub done: u64,
    pub failed: u64,
    pub satisfaction_rate: f64,
    pub mean_migrations: f64,
    pub max_migrations: u64,
    pub mean_paid: Money,
    pub local_optimality_violations: u64,
    /// Mean of (paid - cheapest feasible quote) / cheapest over done requests.
    pub global_gap: f64,
    pub global_gap_samples: u64,
    /// Standard deviation of the brokers' mean in-flight workload.
    pub workload_std: f64,
    pub dropped_messages: u64,
    pub brokers: BTreeMap<String, BrokerLoad>,
    pub messages: BTreeMap<String, u64>,
}

pub(crate) fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Migrations per conversation, counted from broker-to-broker CFP deliveries.
pub fn migration_counts(trace: &[EventRecord]) -> BTreeMap<ConversationId, u64> {
    let mut counts = BTreeMap::new();
    for r in trace {
        let broker_to_broker = matches!((r.from, r.to), (Some(f), Some(t)) if f.kind == AgentKind::Broker && t.kind == AgentKind::Broker);
        if r.kind == RecordKind::Deliver && r.action == Performative::Cfp.as_str() && broker_to_broker {
            if let Some(conv) = r.conversation {
                *counts.entry(conv).or_insert(0) += 1;
            }
        }
    }
    counts
}

pub fn compute_metrics(trace: &[EventRecord], world: &World) -> MetricsReport {
    let audit = &world.audit;
    let requests = world.consumers.len() as u64;
    let done: Vec<ConversationId> =
        world.consumers.iter().filter(|(_, c)| c.phase == ConsumerPhase::Done).map(|(id, _)| *id).collect();
    let failed = world.consumers.values().filter(|c| c.phase == ConsumerPhase::Failed).count() as u64;
    let finished = done.len() as u64 + failed;
    let satisfaction_rate = if finished == 0 { 0.0 } else { done.len() as f64 / finished as f64 };

    let migrations = migration_counts(trace);
    let mean_migrations =
        if requests == 0 { 0.0 } else { migrations.values().sum::<u64>() as f64 / requests as f64 };

    let paid: Vec<Money> = done.iter().filter_map(|id| world.consumers[id].paid).collect();
    let mean_paid = if paid.is_empty() {
        Money::ZERO
    } else {
        Money::from_cents_f64(paid.iter().map(|m| m.cents() as f64).sum::<f64>() / paid.len() as f64)
    };

    let mut local_optimality_violations = 0;
    let mut gaps = Vec::new();
    for id in &done {
        let Some(paid) = world.consumers[id].paid else { continue };
        let Some(log) = audit.conversations.get(id) else { continue };
        if let Some(sel) = &log.last_selection {
            let cheapest = sel
                .candidates
                .iter()
                .filter_map(|(_, prices)| total_cost(&log.request.bundle, prices, sel.period).ok())
                .min();
            if cheapest != Some(paid) {
                local_optimality_violations += 1;
            }
        }
        let best = log.quotes.iter().filter(|q| q.feasible).filter_map(|q| q.cost).min();
        if let Some(best) = best.filter(|b| *b > Money::ZERO) {
            gaps.push((paid.cents() - best.cents()) as f64 / best.cents() as f64);
        }
    }
    let global_gap = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<f64>() / gaps.len() as f64 };

    let brokers: BTreeMap<String, BrokerLoad> = world
        .brokers
        .keys()
        .map(|b| (b.to_string(), broker_load(*b, world)))
        .collect();
    let workload_std = if brokers.is_empty() {
        0.0
    } else {
        let n = brokers.len() as f64;
        let mean = brokers.values().map(|l| l.mean).sum::<f64>() / n;
        (brokers.values().map(|l| (l.mean - mean).powi(2)).sum::<f64>() / n).sqrt()
    };

    let mut messages: BTreeMap<String, u64> = Performative::ALL.iter().map(|p| (p.as_str().to_string(), 0)).collect();
    let mut dropped_messages = 0;
    for r in trace {
        match r.kind {
            RecordKind::Deliver | RecordKind::Drop => {
                *messages.entry(r.action.clone()).or_insert(0) += 1;
                if r.kind == RecordKind::Drop {
                    dropped_messages += 1;
                }
            }
            _ => {}
        }
    }

    MetricsReport {
        requests,
        done: done.len() as u64,
        failed,
        satisfaction_rate: round4(satisfaction_rate),
        mean_migrations: round4(mean_migrations),
        max_migrations: migrations.values().copied().max().unwrap_or(0),
        mean_paid,
        local_optimality_violations,
        global_gap: round4(global_gap),
        global_gap_samples: gaps.len() as u64,
        workload_std: round4(workload_std),
        dropped_messages,
        brokers: brokers.into_iter().map(|(k, l)| (k, BrokerLoad { mean: round4(l.mean), ..l })).collect(),
        messages,
    }
}

fn broker_load(broker: AgentId, world: &World) -> BrokerLoad {
    let end = world.audit.end_time;
    let (mut peak, mut area, mut value, mut since) = (0u64, 0f64, 0u64, 0u64);
    for s in world.audit.workload.iter().filter(|s| s.broker == broker) {
        area += value as f64 * (s.time - since) as f64;
        value = s.in_flight;
        since = s.time;
        peak = peak.max(value);
    }
    area += value as f64 * end.saturating_sub(since) as f64;
    let mean = if end == 0 { 0.0 } else { area / end as f64 };
    BrokerLoad { peak, mean }
}
