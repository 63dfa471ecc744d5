use super::ProtocolError;
use crate::model::{AgentId, Message, Money, Payload, Performative, Request};
use crate::pricing::{compute_utility, PricingParams};

/// Rejections a consumer sends per conversation before withdrawing.
pub const DEFAULT_MAX_REJECTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsumerPhase {
    Idle,
    AwaitingCostPropose,
    AwaitingAgreement,
    AwaitingConfirm,
    Running,
    Done,
    Failed,
}

impl ConsumerPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsumerPhase::Idle => "idle",
            ConsumerPhase::AwaitingCostPropose => "awaiting-cost-propose",
            ConsumerPhase::AwaitingAgreement => "awaiting-agreement",
            ConsumerPhase::AwaitingConfirm => "awaiting-confirm",
            ConsumerPhase::Running => "running",
            ConsumerPhase::Done => "done",
            ConsumerPhase::Failed => "failed",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, ConsumerPhase::Done | ConsumerPhase::Failed)
    }
}

/// One consumer conversation. The consumer never inspects who it is talking
/// to: replies always go back to the sender of the message being handled.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumerState {
    pub phase: ConsumerPhase,
    pub request: Request,
    pub paid: Option<Money>,
    /// REJECT_PROPOSAL messages sent so far.
    pub rounds: u32,
    pub max_rejects: u32,
    accepted_cost: Option<Money>,
    last_broker: Option<AgentId>,
    pub provider: Option<AgentId>,
}

impl ConsumerState {
    pub fn new(request: Request, max_rejects: u32) -> Self {
        Self {
            phase: ConsumerPhase::Idle,
            request,
            paid: None,
            rounds: 0,
            max_rejects,
            accepted_cost: None,
            last_broker: None,
            provider: None,
        }
    }

    pub fn id(&self) -> AgentId {
        self.request.ca_id
    }

    fn violation(&self, performative: Performative) -> ProtocolError {
        ProtocolError::OutOfPhase { agent: self.id(), phase: self.phase.as_str(), performative }
    }

    /// Opens the conversation with a CFP to the source broker.
    pub fn start(&mut self) -> Result<Message, ProtocolError> {
        if self.phase != ConsumerPhase::Idle {
            return Err(self.violation(Performative::Cfp));
        }
        self.phase = ConsumerPhase::AwaitingCostPropose;
        Ok(Message::new(
            Performative::Cfp,
            self.request.conversation(),
            self.id(),
            self.request.source,
            Payload::Request(self.request.clone()),
        ))
    }

    pub fn step(&mut self, msg: &Message) -> Result<Vec<Message>, ProtocolError> {
        use ConsumerPhase::*;
        let me = self.id();
        let reply = |performative, payload| Message::new(performative, msg.conversation, me, msg.from, payload);
        let out = match (self.phase, msg.performative, &msg.payload) {
            (AwaitingCostPropose | AwaitingAgreement | AwaitingConfirm, Performative::Propose, Payload::Cost(cost)) => {
                self.last_broker = Some(msg.from);
                if *cost <= self.request.pl {
                    self.accepted_cost = Some(*cost);
                    self.phase = AwaitingAgreement;
                    reply(Performative::AcceptProposal, Payload::Cost(*cost))
                } else if self.rounds < self.max_rejects {
                    self.rounds += 1;
                    self.phase = AwaitingCostPropose;
                    reply(Performative::RejectProposal, Payload::CostLimit(self.request.pl))
                } else {
                    // out of rejections: withdraw and wait for FAILURE
                    self.phase = AwaitingCostPropose;
                    reply(Performative::Refuse, Payload::CostLimit(self.request.pl))
                }
            }
            (AwaitingAgreement, Performative::Propose, Payload::Agreement { cost, .. }) => {
                self.last_broker = Some(msg.from);
                if Some(*cost) == self.accepted_cost {
                    self.phase = AwaitingConfirm;
                    reply(Performative::Agree, msg.payload.clone())
                } else {
                    reply(Performative::Refuse, Payload::Empty)
                }
            }
            (AwaitingConfirm, Performative::Confirm, Payload::Agreement { provider, cost }) => {
                debug_assert!(self.paid.is_none());
                self.paid = Some(*cost);
                self.provider = Some(*provider);
                self.phase = Running;
                reply(Performative::Inform, Payload::Empty)
            }
            (phase, Performative::Failure, _) if !phase.is_terminal() && phase != Idle && phase != Running => {
                self.phase = Failed;
                return Ok(Vec::new());
            }
            (_, performative, _) => return Err(self.violation(performative)),
        };
        Ok(vec![out])
    }

    /// Task finished: report the utility to the broker that made the final proposal.
    pub fn complete(&mut self, on_time: bool, params: &PricingParams) -> Result<Message, ProtocolError> {
        if self.phase != ConsumerPhase::Running {
            return Err(self.violation(Performative::Inform));
        }
        let paid = self.paid.unwrap_or(Money::ZERO);
        let utility = if self.request.pl > Money::ZERO {
            compute_utility(self.request.pl, paid, on_time, params)?
        } else {
            let saving = if paid == Money::ZERO { 1.0 } else { 0.0 };
            (params.w_cost * saving + params.w_time * f64::from(u8::from(on_time))).clamp(0.0, 1.0)
        };
        self.phase = ConsumerPhase::Done;
        let broker = self.last_broker.unwrap_or(self.request.source);
        Ok(Message::new(
            Performative::Inform,
            self.request.conversation(),
            self.id(),
            broker,
            Payload::Feedback(utility),
        ))
    }
}
