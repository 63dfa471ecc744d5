//! Agent state machines for consumers, brokers and providers.
//!
//! Each agent exposes a `step` transition that consumes one incoming
//! message and returns the messages it sends in response. Agents never
//! talk to each other directly; the engine routes everything.

mod broker;
mod consumer;
mod provider;
mod selection;

pub use broker::{BrokerConversation, BrokerEnv, BrokerOutput, BrokerStage, BrokerState, SelectionAudit};
pub use consumer::{ConsumerPhase, ConsumerState, DEFAULT_MAX_REJECTS};
pub use provider::{Allocation, ProviderState, Reservation, ReservationStatus};
pub use selection::{select_best_provider, update_contact_list};

use thiserror::Error;

use crate::model::{AgentId, ConversationId, Performative};
use crate::pricing::PricingError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("{agent} in phase {phase} cannot handle {performative}")]
    OutOfPhase { agent: AgentId, phase: &'static str, performative: Performative },
    #[error("{agent} has no open conversation {conversation}")]
    UnknownConversation { agent: AgentId, conversation: ConversationId },
    #[error("{agent} received {performative} with an unexpected payload")]
    UnexpectedPayload { agent: AgentId, performative: Performative },
    #[error("{agent} received CONFIRM for {conversation} without a hold")]
    ConfirmWithoutHold { agent: AgentId, conversation: ConversationId },
    #[error("{agent} already has conversation {conversation} open")]
    DuplicateConversation { agent: AgentId, conversation: ConversationId },
    #[error(transparent)]
    Pricing(#[from] PricingError),
}
