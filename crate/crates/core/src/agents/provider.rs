use std::collections::BTreeMap;

use super::ProtocolError;
use crate::model::{AgentId, ConversationId, Message, Money, Payload, Performative, ResourceBundle, ResourceType, Time};
use crate::pricing::{expected_unit_price, total_cost, PriceTable, PricingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReservationStatus {
    Held,
    Confirmed,
    Released,
}

/// One entry of the provider's interval-capacity ledger, covering `[est, dlt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservation {
    pub conversation: ConversationId,
    pub broker: AgentId,
    pub bundle: ResourceBundle,
    pub est: Time,
    pub dlt: Time,
    pub cost: Money,
    pub status: ReservationStatus,
}

impl Reservation {
    pub fn is_committed(&self) -> bool {
        matches!(self.status, ReservationStatus::Held | ReservationStatus::Confirmed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Allocation {
    Hold,
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderState {
    pub id: AgentId,
    pub capacity: BTreeMap<ResourceType, u64>,
    pub base_prices: PriceTable,
    pub ledger: Vec<Reservation>,
    /// Quantity currently held or confirmed, per type.
    pub demand: BTreeMap<ResourceType, f64>,
}

impl ProviderState {
    pub fn new(id: AgentId, capacity: BTreeMap<ResourceType, u64>, base_prices: PriceTable) -> Self {
        Self { id, capacity, base_prices, ledger: Vec::new(), demand: BTreeMap::new() }
    }

    /// Peak committed quantity of `resource` over `[est, dlt)`.
    pub fn peak_usage(&self, resource: &ResourceType, est: Time, dlt: Time) -> u64 {
        let committed: Vec<&Reservation> = self
            .ledger
            .iter()
            .filter(|r| r.is_committed() && r.est < dlt && est < r.dlt && r.bundle.quantity(resource) > 0)
            .collect();
        // usage is piecewise constant and only rises at reservation starts
        std::iter::once(est)
            .chain(committed.iter().map(|r| r.est).filter(|&s| s > est && s < dlt))
            .map(|t| {
                committed
                    .iter()
                    .filter(|r| r.est <= t && t < r.dlt)
                    .map(|r| r.bundle.quantity(resource))
                    .sum::<u64>()
            })
            .max()
            .unwrap_or(0)
    }

    /// Whether `bundle` fits alongside every committed reservation over `[est, dlt)`.
    pub fn availability(&self, bundle: &ResourceBundle, est: Time, dlt: Time) -> Allocation {
        if est >= dlt {
            return Allocation::Unavailable(format!("empty interval [{est}, {dlt})"));
        }
        for (resource, &q) in &bundle.items {
            let Some(&cap) = self.capacity.get(resource) else {
                return Allocation::Unavailable(format!("unknown resource type `{resource}`"));
            };
            if self.peak_usage(resource, est, dlt) + q > cap {
                return Allocation::Unavailable(format!("insufficient `{resource}` capacity"));
            }
        }
        Allocation::Hold
    }

    /// Places a hold for `bundle` over `[est, dlt)` if capacity allows.
    pub fn allocate(
        &mut self,
        conversation: ConversationId,
        broker: AgentId,
        bundle: &ResourceBundle,
        est: Time,
        dlt: Time,
        cost: Money,
    ) -> Allocation {
        let outcome = self.availability(bundle, est, dlt);
        if outcome == Allocation::Hold {
            for (resource, &q) in &bundle.items {
                *self.demand.entry(resource.clone()).or_insert(0.0) += q as f64;
            }
            self.ledger.push(Reservation {
                conversation,
                broker,
                bundle: bundle.clone(),
                est,
                dlt,
                cost,
                status: ReservationStatus::Held,
            });
        }
        outcome
    }

    fn active_hold(&mut self, conversation: ConversationId) -> Option<usize> {
        self.ledger
            .iter()
            .rposition(|r| r.conversation == conversation && r.status == ReservationStatus::Held)
    }

    fn release_at(&mut self, idx: usize) {
        let reservation = &mut self.ledger[idx];
        reservation.status = ReservationStatus::Released;
        for (resource, &q) in &reservation.bundle.items {
            if let Some(d) = self.demand.get_mut(resource) {
                *d = (*d - q as f64).max(0.0);
            }
        }
    }

    /// Releases the hold of `conversation`, if any. Returns whether one was released.
    pub fn release_hold(&mut self, conversation: ConversationId) -> bool {
        match self.active_hold(conversation) {
            Some(idx) => {
                self.release_at(idx);
                true
            }
            None => false,
        }
    }

    /// Releases the reservation at `slot` if it is still only held.
    pub fn expire_hold(&mut self, slot: usize) -> bool {
        match self.ledger.get(slot) {
            Some(r) if r.status == ReservationStatus::Held => {
                self.release_at(slot);
                true
            }
            _ => false,
        }
    }

    pub fn release_all_holds(&mut self) -> Vec<ConversationId> {
        let held: Vec<usize> = (0..self.ledger.len())
            .filter(|&i| self.ledger[i].status == ReservationStatus::Held)
            .collect();
        held.into_iter()
            .map(|i| {
                self.release_at(i);
                self.ledger[i].conversation
            })
            .collect()
    }

    /// Prices this provider currently expects, given committed demand.
    pub fn expected_prices(&self, alpha: f64) -> Result<PriceTable, ProtocolError> {
        let mut prices = PriceTable::new();
        for (resource, &base) in &self.base_prices {
            let capacity = self.capacity.get(resource).copied().unwrap_or(0) as f64;
            let demand = self.demand.get(resource).copied().unwrap_or(0.0);
            prices.insert(resource.clone(), expected_unit_price(base, demand, capacity, alpha)?);
        }
        Ok(prices)
    }

    fn demand_ratios(&self, bundle: &ResourceBundle) -> BTreeMap<ResourceType, f64> {
        bundle
            .types()
            .filter_map(|r| {
                let cap = *self.capacity.get(r)?;
                Some((r.clone(), self.demand.get(r).copied().unwrap_or(0.0) / cap as f64))
            })
            .collect()
    }

    /// Provider side of the negotiation.
    pub fn step(&mut self, msg: &Message, params: &PricingParams) -> Result<Vec<Message>, ProtocolError> {
        let conv = msg.conversation;
        let me = self.id;
        let reply = move |performative, to, payload| Message::new(performative, conv, me, to, payload);
        match (msg.performative, &msg.payload) {
            (Performative::Cfp, Payload::Offer { request, cost }) => {
                let refuse = |state: &Self, capacity_short| {
                    vec![reply(
                        Performative::Refuse,
                        msg.from,
                        Payload::DemandRatio { ratios: state.demand_ratios(&request.bundle), capacity_short },
                    )]
                };
                if !request.bundle.types().all(|r| self.capacity.contains_key(r)) {
                    return Ok(refuse(self, true));
                }
                let p = params.period(request);
                let expected = total_cost(&request.bundle, &self.expected_prices(params.alpha)?, p)?;
                if expected > *cost {
                    return Ok(refuse(self, false));
                }
                match self.allocate(conv, msg.from, &request.bundle, request.est, request.dlt, *cost) {
                    Allocation::Hold => Ok(vec![reply(
                        Performative::Propose,
                        msg.from,
                        Payload::Agreement { provider: self.id, cost: *cost },
                    )]),
                    Allocation::Unavailable(_) => Ok(refuse(self, true)),
                }
            }
            (Performative::Confirm, _) => match self.active_hold(conv) {
                Some(idx) => {
                    self.ledger[idx].status = ReservationStatus::Confirmed;
                    let cost = self.ledger[idx].cost;
                    Ok(vec![reply(Performative::Confirm, conv.consumer, Payload::Agreement { provider: self.id, cost })])
                }
                // the hold expired before confirmation arrived
                None if self.ledger.iter().any(|r| r.conversation == conv) => {
                    let bundle = self.ledger.iter().rev().find(|r| r.conversation == conv).map(|r| r.bundle.clone());
                    let ratios = bundle.map(|b| self.demand_ratios(&b)).unwrap_or_default();
                    Ok(vec![reply(
                        Performative::Refuse,
                        msg.from,
                        Payload::DemandRatio { ratios, capacity_short: true },
                    )])
                }
                None => Err(ProtocolError::ConfirmWithoutHold { agent: self.id, conversation: conv }),
            },
            (Performative::Refuse, _) => {
                self.release_hold(conv);
                Ok(Vec::new())
            }
            (Performative::Inform, _) => Ok(Vec::new()),
            (performative, Payload::Request(_)) | (performative @ Performative::Cfp, _) => {
                Err(ProtocolError::UnexpectedPayload { agent: self.id, performative })
            }
            (performative, _) => Err(ProtocolError::OutOfPhase { agent: self.id, phase: "serving", performative }),
        }
    }
}
