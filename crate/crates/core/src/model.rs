//! Shared domain types: agent identities, resources, requests, contact
//! entries and protocol messages.
//!
//! Everything here is a plain value type. Behavior lives in the pricing,
//! migration, agent and engine modules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Simulation time, in whole time units.
pub type Time = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Consumer,
    Broker,
    Provider,
}

impl AgentKind {
    fn prefix(self) -> char {
        match self {
            AgentKind::Consumer => 'C',
            AgentKind::Broker => 'B',
            AgentKind::Provider => 'P',
        }
    }
}

/// Identity of a consumer, broker or provider agent.
///
/// Ordered by kind first (consumer < broker < provider), then by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId {
    pub kind: AgentKind,
    pub index: u32,
}

impl AgentId {
    pub const fn consumer(index: u32) -> Self {
        Self { kind: AgentKind::Consumer, index }
    }

    pub const fn broker(index: u32) -> Self {
        Self { kind: AgentKind::Broker, index }
    }

    pub const fn provider(index: u32) -> Self {
        Self { kind: AgentKind::Provider, index }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.prefix(), self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed agent id `{0}` (expected C<n>, B<n> or P<n>)")]
pub struct ParseAgentIdError(String);

impl FromStr for AgentId {
    type Err = ParseAgentIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        let kind = match chars.next() {
            Some('C') => AgentKind::Consumer,
            Some('B') => AgentKind::Broker,
            Some('P') => AgentKind::Provider,
            _ => return Err(ParseAgentIdError(s.to_string())),
        };
        let index = chars
            .as_str()
            .parse::<u32>()
            .map_err(|_| ParseAgentIdError(s.to_string()))?;
        Ok(Self { kind, index })
    }
}

impl Serialize for AgentId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Name of a resource type such as `cpu` or `storage`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceType(String);

impl ResourceType {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_valid(&self) -> bool {
        !self.0.is_empty() && !self.0.chars().any(|c| c.is_whitespace() || c == ':' || c == ',')
    }
}

impl fmt::Display for ResourceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for ResourceType {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for ResourceType {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Fixed-point money amount with two fractional digits, stored in cents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    pub const fn cents(self) -> i64 {
        self.0
    }

    /// Rounds a real-valued amount expressed in cents, ties to even.
    pub fn from_cents_f64(cents: f64) -> Self {
        Money(round_half_even(cents) as i64)
    }

    /// Rounds a real-valued amount expressed in whole money units, ties to even.
    pub fn from_f64(amount: f64) -> Self {
        Self::from_cents_f64(amount * 100.0)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

pub(crate) fn round_half_even(x: f64) -> f64 {
    let floor = x.floor();
    let frac = x - floor;
    if frac > 0.5 || (frac == 0.5 && floor % 2.0 != 0.0) {
        floor + 1.0
    } else {
        floor
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        if !v.is_finite() {
            return Err(serde::de::Error::custom("money amount must be finite"));
        }
        Ok(Money::from_f64(v))
    }
}

/// Typed resource quantities requested together.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceBundle {
    pub items: BTreeMap<ResourceType, u64>,
}

impl ResourceBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, resource: impl Into<ResourceType>, quantity: u64) -> Self {
        self.items.insert(resource.into(), quantity);
        self
    }

    pub fn quantity(&self, resource: &ResourceType) -> u64 {
        self.items.get(resource).copied().unwrap_or(0)
    }

    pub fn types(&self) -> impl Iterator<Item = &ResourceType> {
        self.items.keys()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl FromIterator<(ResourceType, u64)> for ResourceBundle {
    fn from_iter<I: IntoIterator<Item = (ResourceType, u64)>>(iter: I) -> Self {
        Self { items: iter.into_iter().collect() }
    }
}

/// Identifies one negotiation: the consumer plus its per-consumer sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConversationId {
    pub consumer: AgentId,
    pub seq: u32,
}

impl fmt::Display for ConversationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.consumer, self.seq)
    }
}

/// A consumer's resource demand together with its migration metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub ca_id: AgentId,
    pub seq: u32,
    pub bundle: ResourceBundle,
    /// Earliest start of the lease.
    pub est: Time,
    /// Deadline; the lease interval is `[est, dlt)`.
    pub dlt: Time,
    /// Price limit the consumer is willing to pay.
    pub pl: Money,
    /// First broker contacted.
    pub source: AgentId,
    pub nbre_mig: u32,
    pub visited: BTreeSet<AgentId>,
    /// Limit reported by the consumer in a rejection, carried along migrations.
    pub cost_limit: Option<Money>,
}

impl Request {
    pub fn new(
        ca_id: AgentId,
        seq: u32,
        bundle: ResourceBundle,
        est: Time,
        dlt: Time,
        pl: Money,
        source: AgentId,
    ) -> Self {
        Self {
            ca_id,
            seq,
            bundle,
            est,
            dlt,
            pl,
            source,
            nbre_mig: 0,
            visited: BTreeSet::new(),
            cost_limit: None,
        }
    }

    pub fn conversation(&self) -> ConversationId {
        ConversationId { consumer: self.ca_id, seq: self.seq }
    }

    pub fn lease_duration(&self) -> Time {
        self.dlt.saturating_sub(self.est)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("deadline {dlt} is not after earliest start {est}")]
    DeadlineBeforeStart { est: Time, dlt: Time },
    #[error("negative budget {0}")]
    NegativeBudget(Money),
    #[error("empty resource bundle")]
    EmptyBundle,
    #[error("non-positive quantity for resource `{0}`")]
    NonPositiveQuantity(ResourceType),
    #[error("invalid resource type name `{0}`")]
    InvalidResourceType(ResourceType),
    #[error("consumer id {0} is not a consumer")]
    NotAConsumer(AgentId),
    #[error("source {0} is not a broker")]
    SourceNotBroker(AgentId),
    #[error("migration count {nbre_mig} exceeds max_mig {max_mig}")]
    TooManyMigrations { nbre_mig: u32, max_mig: u32 },
    #[error("visited set contains non-broker {0}")]
    VisitedNotBroker(AgentId),
    #[error("source {0} missing from a non-empty visited set")]
    SourceNotVisited(AgentId),
}

/// Checks every request invariant, reporting the first violated field.
pub fn validate_request(req: &Request) -> Result<(), ValidationError> {
    validate_request_with(req, None)
}

/// Same as [`validate_request`], additionally enforcing a hop bound.
pub fn validate_request_with(req: &Request, max_mig: Option<u32>) -> Result<(), ValidationError> {
    if req.ca_id.kind != AgentKind::Consumer {
        return Err(ValidationError::NotAConsumer(req.ca_id));
    }
    if req.est >= req.dlt {
        return Err(ValidationError::DeadlineBeforeStart { est: req.est, dlt: req.dlt });
    }
    if req.pl < Money::ZERO {
        return Err(ValidationError::NegativeBudget(req.pl));
    }
    if req.bundle.is_empty() {
        return Err(ValidationError::EmptyBundle);
    }
    for (resource, &q) in &req.bundle.items {
        if !resource.is_valid() {
            return Err(ValidationError::InvalidResourceType(resource.clone()));
        }
        if q == 0 {
            return Err(ValidationError::NonPositiveQuantity(resource.clone()));
        }
    }
    if req.source.kind != AgentKind::Broker {
        return Err(ValidationError::SourceNotBroker(req.source));
    }
    if let Some(max_mig) = max_mig {
        if req.nbre_mig > max_mig {
            return Err(ValidationError::TooManyMigrations { nbre_mig: req.nbre_mig, max_mig });
        }
    }
    if let Some(b) = req.visited.iter().find(|b| b.kind != AgentKind::Broker) {
        return Err(ValidationError::VisitedNotBroker(*b));
    }
    if !req.visited.is_empty() && !req.visited.contains(&req.source) {
        return Err(ValidationError::SourceNotVisited(req.source));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderStatus {
    Live,
    Departed,
}

/// A broker's knowledge of one provider.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactEntry {
    pub provider: AgentId,
    /// Unit cost per resource type as currently believed by the broker.
    pub prices: BTreeMap<ResourceType, Money>,
    /// Advertised base prices, the reference for demand-driven updates.
    pub base_prices: BTreeMap<ResourceType, Money>,
    pub grade: f64,
    pub status: ProviderStatus,
    pub delay: Time,
}

impl ContactEntry {
    pub fn new(provider: AgentId, base_prices: BTreeMap<ResourceType, Money>, delay: Time) -> Self {
        Self {
            provider,
            prices: base_prices.clone(),
            base_prices,
            grade: DEFAULT_GRADE,
            status: ProviderStatus::Live,
            delay,
        }
    }

    pub fn is_live(&self) -> bool {
        self.status == ProviderStatus::Live
    }

    pub fn covers(&self, bundle: &ResourceBundle) -> bool {
        bundle.types().all(|r| self.prices.contains_key(r))
    }
}

/// Grade given to a provider the broker has no feedback about yet.
pub const DEFAULT_GRADE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Performative {
    Cfp,
    Propose,
    AcceptProposal,
    RejectProposal,
    Agree,
    Refuse,
    Confirm,
    Inform,
    Failure,
}

impl Performative {
    pub const ALL: [Performative; 9] = [
        Performative::Cfp,
        Performative::Propose,
        Performative::AcceptProposal,
        Performative::RejectProposal,
        Performative::Agree,
        Performative::Refuse,
        Performative::Confirm,
        Performative::Inform,
        Performative::Failure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Performative::Cfp => "CFP",
            Performative::Propose => "PROPOSE",
            Performative::AcceptProposal => "ACCEPT_PROPOSAL",
            Performative::RejectProposal => "REJECT_PROPOSAL",
            Performative::Agree => "AGREE",
            Performative::Refuse => "REFUSE",
            Performative::Confirm => "CONFIRM",
            Performative::Inform => "INFORM",
            Performative::Failure => "FAILURE",
        }
    }
}

impl fmt::Display for Performative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Call for proposals from a consumer or a migrating broker.
    Request(Request),
    /// Call for proposals from a broker to a provider, with the cost the
    /// broker quoted to the consumer.
    Offer { request: Request, cost: Money },
    Cost(Money),
    CostLimit(Money),
    /// Terms of an agreement with a specific provider.
    Agreement { provider: AgentId, cost: Money },
    /// Provider congestion signal: committed demand over capacity per type.
    DemandRatio { ratios: BTreeMap<ResourceType, f64>, capacity_short: bool },
    Feedback(f64),
    Empty,
}

impl Payload {
    /// Compact single-token rendering used in traces.
    pub fn digest(&self) -> String {
        match self {
            Payload::Request(r) => format!(
                "req:mig={},visited={},limit={}",
                r.nbre_mig,
                r.visited.iter().map(|b| b.to_string()).collect::<Vec<_>>().join("+"),
                r.cost_limit.map(|m| m.to_string()).unwrap_or_else(|| "-".into())
            ),
            Payload::Offer { request, cost } => format!("offer:cost={cost},mig={}", request.nbre_mig),
            Payload::Cost(c) => format!("cost={c}"),
            Payload::CostLimit(c) => format!("limit={c}"),
            Payload::Agreement { provider, cost } => format!("agreement:{provider},cost={cost}"),
            Payload::DemandRatio { ratios, capacity_short } => format!(
                "ratio:{}{}",
                ratios
                    .iter()
                    .map(|(r, v)| format!("{r}={v:.4}"))
                    .collect::<Vec<_>>()
                    .join(","),
                if *capacity_short { ",short" } else { "" }
            ),
            Payload::Feedback(u) => format!("utility={u:.4}"),
            Payload::Empty => "-".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub performative: Performative,
    pub conversation: ConversationId,
    pub from: AgentId,
    pub to: AgentId,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("REJECT_PROPOSAL must carry a cost limit")]
    RejectWithoutLimit,
    #[error("REFUSE from a provider must carry a demand/price ratio")]
    ProviderRefuseWithoutRatio,
    #[error("FAILURE may only be sent by a broker to a consumer")]
    MisroutedFailure,
}

impl Message {
    pub fn new(
        performative: Performative,
        conversation: ConversationId,
        from: AgentId,
        to: AgentId,
        payload: Payload,
    ) -> Self {
        Self { performative, conversation, from, to, payload }
    }

    pub fn validate(&self) -> Result<(), MessageError> {
        match self.performative {
            Performative::RejectProposal if !matches!(self.payload, Payload::CostLimit(_)) => {
                Err(MessageError::RejectWithoutLimit)
            }
            Performative::Refuse
                if self.from.kind == AgentKind::Provider
                    && !matches!(self.payload, Payload::DemandRatio { .. }) =>
            {
                Err(MessageError::ProviderRefuseWithoutRatio)
            }
            Performative::Failure
                if self.from.kind != AgentKind::Broker || self.to.kind != AgentKind::Consumer =>
            {
                Err(MessageError::MisroutedFailure)
            }
            _ => Ok(()),
        }
    }
}
