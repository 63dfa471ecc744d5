//! Broker self-organization: multi-criteria evaluation of neighbor brokers,
//! Pareto dominance, constrained selection of a migration direction and
//! workload coherence after a migration.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, Message, Payload, Performative, Request, ResourceType, Time};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MigrationError {
    #[error("criteria vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("source broker has no in-flight work to hand over")]
    CoherenceViolation,
}

/// Minimized criteria of one neighbor broker.
#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaVector(pub Vec<f64>);

impl CriteriaVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn lex_cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

/// Snapshot of a neighbor broker as seen by the evaluating broker.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborInfo {
    pub broker: AgentId,
    /// In-flight conversation count.
    pub workload: u64,
    /// Link delay from the evaluating broker.
    pub delay: Time,
    pub provider_types: BTreeSet<ResourceType>,
    pub provider_count: usize,
}

/// Criteria appended after the two base criteria (workload, delay).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtraCriterion {
    /// `1 / (1 + provider_count)`: favors brokers with richer contact lists.
    InverseProviderCount,
    /// `1 / (1 + |provider_types|)`: favors brokers covering more resource types.
    InverseTypeCount,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriteriaConfig {
    pub extra: Vec<ExtraCriterion>,
}

impl CriteriaConfig {
    pub fn len(&self) -> usize {
        2 + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MigrationDecision {
    Migrate(AgentId),
    StayAndFail,
}

pub fn criteria_vector(info: &NeighborInfo, config: &CriteriaConfig) -> CriteriaVector {
    let mut values = vec![info.workload as f64, info.delay as f64];
    for extra in &config.extra {
        values.push(match extra {
            ExtraCriterion::InverseProviderCount => 1.0 / (1.0 + info.provider_count as f64),
            ExtraCriterion::InverseTypeCount => 1.0 / (1.0 + info.provider_types.len() as f64),
        });
    }
    CriteriaVector(values)
}

/// Pareto dominance under minimization: `a` is nowhere worse and somewhere better.
pub fn dominates(a: &CriteriaVector, b: &CriteriaVector) -> Result<bool, MigrationError> {
    if a.len() != b.len() {
        return Err(MigrationError::LengthMismatch(a.len(), b.len()));
    }
    let mut strictly = false;
    for (x, y) in a.0.iter().zip(&b.0) {
        if x > y {
            return Ok(false);
        }
        if x < y {
            strictly = true;
        }
    }
    Ok(strictly)
}

/// Preventive constraints: the neighbor knows providers, covers every
/// requested type and has not handled this request before.
pub fn verify_constraints(req: &Request, info: &NeighborInfo) -> bool {
    info.provider_count > 0
        && req.bundle.types().all(|r| info.provider_types.contains(r))
        && !req.visited.contains(&info.broker)
}

/// Repeatedly picks a non-dominated neighbor among the remaining ones and
/// accepts it if it passes [`verify_constraints`]; otherwise removes it and
/// retries. Ties among non-dominated neighbors go to the lexicographically
/// smallest criteria vector, then the lowest broker id.
pub fn select_direction(req: &Request, neighbors: &[NeighborInfo], config: &CriteriaConfig) -> MigrationDecision {
    let mut remaining: Vec<(&NeighborInfo, CriteriaVector)> =
        neighbors.iter().map(|n| (n, criteria_vector(n, config))).collect();

    while !remaining.is_empty() {
        let front: Vec<usize> = (0..remaining.len())
            .filter(|&q| {
                !remaining.iter().enumerate().any(|(k, (_, fk))| {
                    k != q && dominates(fk, &remaining[q].1).unwrap_or(false)
                })
            })
            .collect();
        let direct = front
            .into_iter()
            .min_by(|&a, &b| {
                let (na, fa) = &remaining[a];
                let (nb, fb) = &remaining[b];
                fa.lex_cmp(fb).then(na.broker.cmp(&nb.broker))
            })
            .expect("a finite non-empty set has a non-dominated member");
        if verify_constraints(req, remaining[direct].0) {
            return MigrationDecision::Migrate(remaining[direct].0.broker);
        }
        remaining.swap_remove(direct);
    }
    MigrationDecision::StayAndFail
}

/// Outcome of the self-organization step of a broker whose candidate
/// providers are exhausted.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfOrganization {
    pub decision: MigrationDecision,
    pub messages: Vec<Message>,
    /// Change to the evaluating broker's own in-flight count.
    pub workload_delta: i64,
}

pub fn self_organize(
    req: &Request,
    self_id: AgentId,
    neighbors: &[NeighborInfo],
    max_mig: u32,
    config: &CriteriaConfig,
) -> SelfOrganization {
    let conversation = req.conversation();
    let failure = || SelfOrganization {
        decision: MigrationDecision::StayAndFail,
        messages: vec![Message::new(Performative::Failure, conversation, self_id, req.ca_id, Payload::Empty)],
        workload_delta: -1,
    };
    if req.nbre_mig >= max_mig {
        return failure();
    }
    let mut migrated = req.clone();
    migrated.visited.insert(self_id);
    let candidates: Vec<NeighborInfo> = neighbors.iter().filter(|n| n.broker != self_id).cloned().collect();
    match select_direction(&migrated, &candidates, config) {
        MigrationDecision::Migrate(target) => {
            migrated.nbre_mig += 1;
            SelfOrganization {
                decision: MigrationDecision::Migrate(target),
                messages: vec![Message::new(
                    Performative::Cfp,
                    conversation,
                    self_id,
                    target,
                    Payload::Request(migrated),
                )],
                workload_delta: -1,
            }
        }
        MigrationDecision::StayAndFail => failure(),
    }
}

/// Corrective constraint after a migration: one unit of in-flight work moves
/// from the source broker to the destination.
pub fn reestablish_coherence(source_workload: u64, dest_workload: u64) -> Result<(u64, u64), MigrationError> {
    if source_workload == 0 {
        return Err(MigrationError::CoherenceViolation);
    }
    Ok((source_workload - 1, dest_workload + 1))
}
