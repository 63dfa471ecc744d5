use std::collections::{BTreeMap, BTreeSet};

use super::selection::{select_best_provider, update_contact_list};
use super::ProtocolError;
use crate::migration::{self_organize, CriteriaConfig, MigrationDecision, NeighborInfo};
use crate::model::{
    AgentId, AgentKind, ContactEntry, ConversationId, Message, Money, Payload, Performative, Request,
    Time,
};
use crate::pricing::{expected_unit_price, total_cost, update_grade, PriceTable, PricingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrokerStage {
    /// A cost PROPOSE went to the consumer.
    AwaitingCostAck,
    /// A CFP went to the selected provider.
    AwaitingProvider,
    /// The provider's agreement was forwarded to the consumer.
    AwaitingAgreement,
    /// CONFIRM sent; waiting for the consumer's feedback.
    Confirmed,
}

impl BrokerStage {
    fn as_str(self) -> &'static str {
        match self {
            BrokerStage::AwaitingCostAck => "awaiting-cost-ack",
            BrokerStage::AwaitingProvider => "awaiting-provider",
            BrokerStage::AwaitingAgreement => "awaiting-agreement",
            BrokerStage::Confirmed => "confirmed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerConversation {
    pub request: Request,
    pub temporary_list: Vec<ContactEntry>,
    pub best: Option<AgentId>,
    pub proposed_cost: Money,
    pub stage: BrokerStage,
    /// Providers that received a CFP for this request.
    pub attempted: BTreeSet<AgentId>,
}

/// Candidates and outcome of one provider selection, kept for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionAudit {
    pub conversation: ConversationId,
    pub broker: AgentId,
    pub chosen: AgentId,
    pub cost: Money,
    pub period: f64,
    pub candidates: Vec<(AgentId, PriceTable)>,
}

/// What a broker can observe of the world when handling one message.
#[derive(Debug, Clone, Copy)]
pub struct BrokerEnv<'a> {
    pub now: Time,
    /// Live providers visible to this broker, as fresh contact entries.
    pub registry_view: &'a [ContactEntry],
    pub neighbors: &'a [NeighborInfo],
    pub max_mig: u32,
    pub params: &'a PricingParams,
    pub criteria: &'a CriteriaConfig,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BrokerOutput {
    pub messages: Vec<Message>,
    /// Set when the request was handed over to a neighbor broker.
    pub migrated_to: Option<AgentId>,
    /// Set when the conversation closed here, with whether it was satisfied.
    pub closed: Option<bool>,
    pub selection: Option<SelectionAudit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerState {
    pub id: AgentId,
    pub contact_list: Vec<ContactEntry>,
    pub conversations: BTreeMap<ConversationId, BrokerConversation>,
    /// Open conversations plus migrations already accounted to this broker
    /// but still in transit.
    pub in_flight: u64,
    pub neighbors: BTreeSet<AgentId>,
}

impl BrokerState {
    pub fn new(id: AgentId, neighbors: BTreeSet<AgentId>) -> Self {
        Self { id, contact_list: Vec::new(), conversations: BTreeMap::new(), in_flight: 0, neighbors }
    }

    fn violation(&self, stage: Option<BrokerStage>, performative: Performative) -> ProtocolError {
        ProtocolError::OutOfPhase {
            agent: self.id,
            phase: stage.map(BrokerStage::as_str).unwrap_or("idle"),
            performative,
        }
    }

    pub fn step(&mut self, msg: &Message, env: &BrokerEnv<'_>) -> Result<BrokerOutput, ProtocolError> {
        let conv_id = msg.conversation;
        if msg.performative == Performative::Cfp {
            return self.open(msg, env);
        }
        let Some(stage) = self.conversations.get(&conv_id).map(|c| c.stage) else {
            return Err(ProtocolError::UnknownConversation { agent: self.id, conversation: conv_id });
        };
        let from_provider = msg.from.kind == AgentKind::Provider;
        match (stage, msg.performative, from_provider) {
            (BrokerStage::AwaitingCostAck, Performative::RejectProposal, false) => {
                let Payload::CostLimit(limit) = msg.payload else {
                    return Err(ProtocolError::UnexpectedPayload { agent: self.id, performative: msg.performative });
                };
                let conv = self.conversations.get_mut(&conv_id).expect("checked above");
                conv.request.cost_limit = Some(conv.request.cost_limit.map_or(limit, |l| l.min(limit)));
                drop_best(conv);
                self.advance(conv_id, env)
            }
            (BrokerStage::AwaitingCostAck, Performative::AcceptProposal, false) => {
                let conv = self.conversations.get_mut(&conv_id).expect("checked above");
                let provider = conv.best.expect("a cost was proposed for a selected provider");
                conv.stage = BrokerStage::AwaitingProvider;
                conv.attempted.insert(provider);
                let offer = Payload::Offer { request: conv.request.clone(), cost: conv.proposed_cost };
                Ok(BrokerOutput {
                    messages: vec![Message::new(Performative::Cfp, conv_id, self.id, provider, offer)],
                    ..BrokerOutput::default()
                })
            }
            (BrokerStage::AwaitingCostAck, Performative::Refuse, false) => {
                // consumer ran out of rejections
                Ok(self.fail(conv_id))
            }
            (BrokerStage::AwaitingProvider | BrokerStage::Confirmed, Performative::Refuse, true) => {
                self.provider_refused(msg, env)
            }
            (BrokerStage::AwaitingProvider, Performative::Propose, true) => {
                let conv = self.conversations.get_mut(&conv_id).expect("checked above");
                if conv.best != Some(msg.from) {
                    // stale provider: release whatever it holds
                    return Ok(BrokerOutput {
                        messages: vec![Message::new(Performative::Refuse, conv_id, self.id, msg.from, Payload::Empty)],
                        ..BrokerOutput::default()
                    });
                }
                conv.stage = BrokerStage::AwaitingAgreement;
                let agreement = Payload::Agreement { provider: msg.from, cost: conv.proposed_cost };
                Ok(BrokerOutput {
                    messages: vec![Message::new(Performative::Propose, conv_id, self.id, conv.request.ca_id, agreement)],
                    ..BrokerOutput::default()
                })
            }
            (BrokerStage::AwaitingAgreement, Performative::Agree, false) => {
                let conv = self.conversations.get_mut(&conv_id).expect("checked above");
                let provider = conv.best.expect("agreement implies a selected provider");
                conv.stage = BrokerStage::Confirmed;
                Ok(BrokerOutput {
                    messages: vec![Message::new(
                        Performative::Confirm,
                        conv_id,
                        self.id,
                        provider,
                        Payload::Agreement { provider, cost: conv.proposed_cost },
                    )],
                    ..BrokerOutput::default()
                })
            }
            (BrokerStage::AwaitingAgreement, Performative::Refuse, false) => {
                let conv = self.conversations.get_mut(&conv_id).expect("checked above");
                let provider = conv.best.expect("agreement implies a selected provider");
                let release = Message::new(Performative::Refuse, conv_id, self.id, provider, Payload::Empty);
                drop_best(conv);
                let mut out = self.advance(conv_id, env)?;
                out.messages.insert(0, release);
                Ok(out)
            }
            (BrokerStage::Confirmed, Performative::Inform, false) => {
                let Payload::Feedback(utility) = msg.payload else {
                    return Err(ProtocolError::UnexpectedPayload { agent: self.id, performative: msg.performative });
                };
                let conv = self.conversations.remove(&conv_id).expect("checked above");
                if let Some(provider) = conv.best {
                    self.grade(provider, utility, env.params.lambda)?;
                }
                self.in_flight = self.in_flight.saturating_sub(1);
                Ok(BrokerOutput { closed: Some(true), ..BrokerOutput::default() })
            }
            (stage, performative, _) => Err(self.violation(Some(stage), performative)),
        }
    }

    fn open(&mut self, msg: &Message, env: &BrokerEnv<'_>) -> Result<BrokerOutput, ProtocolError> {
        let Payload::Request(request) = &msg.payload else {
            return Err(ProtocolError::UnexpectedPayload { agent: self.id, performative: msg.performative });
        };
        if self.conversations.contains_key(&msg.conversation) {
            return Err(ProtocolError::DuplicateConversation { agent: self.id, conversation: msg.conversation });
        }
        let mut request = request.clone();
        // migrated requests were already accounted to us by the coherence step
        if request.nbre_mig == 0 {
            self.in_flight += 1;
        }
        request.visited.insert(self.id);
        self.contact_list = update_contact_list(&self.contact_list, env.registry_view);
        let temporary_list = self.contact_list.iter().filter(|e| e.is_live()).cloned().collect();
        self.conversations.insert(
            msg.conversation,
            BrokerConversation {
                request,
                temporary_list,
                best: None,
                proposed_cost: Money::ZERO,
                stage: BrokerStage::AwaitingCostAck,
                attempted: BTreeSet::new(),
            },
        );
        self.advance(msg.conversation, env)
    }

    /// Selects the next provider from the temporary list and proposes its
    /// cost, or self-organizes once the list is exhausted.
    fn advance(&mut self, conv_id: ConversationId, env: &BrokerEnv<'_>) -> Result<BrokerOutput, ProtocolError> {
        let conv = self.conversations.get_mut(&conv_id).expect("caller checked the conversation");
        // providers that left since the CFP are no longer candidates
        conv.temporary_list.retain(|e| env.registry_view.iter().any(|r| r.provider == e.provider));
        let p = env.params.period(&conv.request);
        let bundle = &conv.request.bundle;
        let candidates: Vec<(AgentId, PriceTable)> = conv
            .temporary_list
            .iter()
            .filter(|e| e.is_live())
            .map(|e| (e.provider, e.prices.clone()))
            .collect();
        if let Some(limit) = conv.request.cost_limit {
            conv.temporary_list
                .retain(|e| total_cost(bundle, &e.prices, p).map_or(true, |cost| cost <= limit));
        }
        match select_best_provider(&conv.temporary_list, bundle, p) {
            Some(best) => {
                let entry = conv.temporary_list.iter().find(|e| e.provider == best).expect("selected from list");
                let cost = total_cost(bundle, &entry.prices, p)?;
                conv.best = Some(best);
                conv.proposed_cost = cost;
                conv.stage = BrokerStage::AwaitingCostAck;
                Ok(BrokerOutput {
                    messages: vec![Message::new(
                        Performative::Propose,
                        conv_id,
                        self.id,
                        conv.request.ca_id,
                        Payload::Cost(cost),
                    )],
                    selection: Some(SelectionAudit {
                        conversation: conv_id,
                        broker: self.id,
                        chosen: best,
                        cost,
                        period: p,
                        candidates,
                    }),
                    ..BrokerOutput::default()
                })
            }
            None => self.self_organize(conv_id, env),
        }
    }

    fn self_organize(&mut self, conv_id: ConversationId, env: &BrokerEnv<'_>) -> Result<BrokerOutput, ProtocolError> {
        let conv = self.conversations.remove(&conv_id).expect("caller checked the conversation");
        let neighbors: Vec<NeighborInfo> =
            env.neighbors.iter().filter(|n| self.neighbors.contains(&n.broker)).cloned().collect();
        let outcome = self_organize(&conv.request, self.id, &neighbors, env.max_mig, env.criteria);
        for provider in &conv.attempted {
            self.grade(*provider, 0.0, env.params.lambda)?;
        }
        let mut out = BrokerOutput { messages: outcome.messages, ..BrokerOutput::default() };
        match outcome.decision {
            // the engine moves the in-flight unit to the target
            MigrationDecision::Migrate(target) => out.migrated_to = Some(target),
            MigrationDecision::StayAndFail => {
                self.in_flight = self.in_flight.saturating_sub(1);
                out.closed = Some(false);
            }
        }
        Ok(out)
    }

    fn fail(&mut self, conv_id: ConversationId) -> BrokerOutput {
        let conv = self.conversations.remove(&conv_id).expect("caller checked the conversation");
        self.in_flight = self.in_flight.saturating_sub(1);
        BrokerOutput {
            messages: vec![Message::new(Performative::Failure, conv_id, self.id, conv.request.ca_id, Payload::Empty)],
            closed: Some(false),
            ..BrokerOutput::default()
        }
    }

    fn provider_refused(&mut self, msg: &Message, env: &BrokerEnv<'_>) -> Result<BrokerOutput, ProtocolError> {
        let conv_id = msg.conversation;
        let Payload::DemandRatio { ratios, capacity_short } = &msg.payload else {
            return Err(ProtocolError::UnexpectedPayload { agent: self.id, performative: msg.performative });
        };
        let conv = self.conversations.get_mut(&conv_id).expect("caller checked the conversation");
        if conv.best != Some(msg.from) {
            // refusal from a provider we already moved past
            return Ok(BrokerOutput::default());
        }
        let p = env.params.period(&conv.request);
        let old_cost = conv.proposed_cost;
        let alpha = env.params.alpha;
        let reprice = |entry: &mut ContactEntry| -> Result<(), ProtocolError> {
            for (resource, ratio) in ratios {
                if let Some(&base) = entry.base_prices.get(resource) {
                    entry.prices.insert(resource.clone(), expected_unit_price(base, *ratio, 1.0, alpha)?);
                }
            }
            Ok(())
        };
        let mut new_cost = None;
        if let Some(entry) = conv.temporary_list.iter_mut().find(|e| e.provider == msg.from) {
            reprice(entry)?;
            new_cost = total_cost(&conv.request.bundle, &entry.prices, p).ok();
        }
        if let Some(entry) = self.contact_list.iter_mut().find(|e| e.provider == msg.from) {
            reprice(entry)?;
        }
        let conv = self.conversations.get_mut(&conv_id).expect("still open");
        let raised = new_cost.is_some_and(|c| c > old_cost);
        if *capacity_short || !raised {
            drop_best(conv);
        }
        self.advance(conv_id, env)
    }

    fn grade(&mut self, provider: AgentId, utility: f64, lambda: f64) -> Result<(), ProtocolError> {
        if let Some(entry) = self.contact_list.iter_mut().find(|e| e.provider == provider) {
            entry.grade = update_grade(entry.grade, utility.clamp(0.0, 1.0), lambda)?;
        }
        Ok(())
    }
}

fn drop_best(conv: &mut BrokerConversation) {
    if let Some(best) = conv.best.take() {
        conv.temporary_list.retain(|e| e.provider != best);
    }
}
