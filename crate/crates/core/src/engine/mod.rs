//! The discrete-event kernel that drives consumers, brokers and providers.

mod event;
mod trace;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use event::{deliver, ChurnAction, ChurnEvent, DelayMatrix, Event, EventKind, EventQueue};
pub use trace::{parse_trace, trace_to_string, write_trace, EventRecord, RecordKind, TraceParseError};

use crate::agents::{
    update_contact_list, Allocation, BrokerEnv, BrokerState, ConsumerPhase, ConsumerState, ProtocolError,
    ProviderState, SelectionAudit,
};
use crate::migration::{reestablish_coherence, CriteriaConfig, NeighborInfo};
use crate::model::{
    AgentId, AgentKind, ContactEntry, ConversationId, Message, Money, Payload, Performative, Request, ResourceType,
    Time,
};
use crate::pricing::{total_cost, PricingParams};
use crate::scenario::{ProviderSpec, Scenario};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("t={time}: {source}")]
    Protocol {
        time: Time,
        #[source]
        source: ProtocolError,
    },
    #[error("t={time}: {reason}")]
    Churn { time: Time, reason: String },
    #[error("t={time}: message for unknown agent {agent}")]
    UnknownAgent { time: Time, agent: AgentId },
}

/// What one live provider would charge for a request at issue time.
#[derive(Debug, Clone, PartialEq)]
pub struct Quote {
    pub provider: AgentId,
    /// `None` when the provider lacks one of the requested types.
    pub cost: Option<Money>,
    pub fits: bool,
    /// Covers the bundle, has the capacity and stays within the price limit.
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversationLog {
    pub request: Request,
    pub issued_at: Time,
    pub quotes: Vec<Quote>,
    /// Most recent provider selection made for this request.
    pub last_selection: Option<SelectionAudit>,
    pub outcome: Option<(Outcome, Time)>,
    pub paid: Option<Money>,
    pub provider: Option<AgentId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MigrationRecord {
    pub time: Time,
    pub conversation: ConversationId,
    pub from: AgentId,
    pub to: AgentId,
    /// Migration count carried by the forwarded CFP.
    pub nbre_mig: u32,
    /// Brokers visited before the handover, including `from`.
    pub visited: BTreeSet<AgentId>,
    /// The target as the source saw it when choosing.
    pub target: NeighborInfo,
    pub workload_before: (u64, u64),
    pub workload_after: (u64, u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkloadSample {
    pub time: Time,
    pub broker: AgentId,
    pub in_flight: u64,
}

/// Side records the metrics need beyond the trace itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunAudit {
    pub conversations: BTreeMap<ConversationId, ConversationLog>,
    pub migrations: Vec<MigrationRecord>,
    pub workload: Vec<WorkloadSample>,
    pub end_time: Time,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub consumers: BTreeMap<ConversationId, ConsumerState>,
    pub brokers: BTreeMap<AgentId, BrokerState>,
    pub providers: BTreeMap<AgentId, ProviderState>,
    /// The global registry of live providers.
    pub live: BTreeSet<AgentId>,
    pub visibility: BTreeMap<AgentId, BTreeSet<AgentId>>,
    pub audit: RunAudit,
}

impl World {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let brokers = scenario
            .brokers
            .iter()
            .map(|b| {
                let id = AgentId::broker(b.id);
                (id, BrokerState::new(id, b.neighbors.iter().map(|&n| AgentId::broker(n)).collect()))
            })
            .collect();
        let visibility = scenario
            .brokers
            .iter()
            .map(|b| (AgentId::broker(b.id), b.visibility.iter().map(|&p| AgentId::provider(p)).collect()))
            .collect();
        let providers: BTreeMap<AgentId, ProviderState> =
            scenario.providers.iter().map(|p| (AgentId::provider(p.id), provider_state(p))).collect();
        let live = providers.keys().copied().collect();
        let mut consumers = BTreeMap::new();
        for c in &scenario.consumers {
            for seq in 0..c.requests.len() {
                let request = scenario.request(c, seq);
                consumers.insert(request.conversation(), ConsumerState::new(request, scenario.settings.max_rejects));
            }
        }
        Self { consumers, brokers, providers, live, visibility, audit: RunAudit::default() }
    }

    pub fn is_live(&self, provider: AgentId) -> bool {
        self.live.contains(&provider)
    }

    /// Live providers `broker` can see, as fresh contact entries.
    pub fn registry_view(&self, broker: AgentId, delays: &DelayMatrix) -> Vec<ContactEntry> {
        self.visibility
            .get(&broker)
            .into_iter()
            .flatten()
            .filter(|p| self.is_live(**p))
            .filter_map(|p| {
                let state = self.providers.get(p)?;
                Some(ContactEntry::new(*p, state.base_prices.clone(), delays.get(broker, *p)))
            })
            .collect()
    }

    /// What `broker` learns about each neighbor when it has to migrate.
    pub fn neighbor_infos(&self, broker: AgentId, delays: &DelayMatrix) -> Vec<NeighborInfo> {
        let Some(state) = self.brokers.get(&broker) else { return Vec::new() };
        state
            .neighbors
            .iter()
            .filter_map(|n| {
                let neighbor = self.brokers.get(n)?;
                let list = update_contact_list(&neighbor.contact_list, &self.registry_view(*n, delays));
                let live: Vec<&ContactEntry> = list.iter().filter(|e| e.is_live()).collect();
                Some(NeighborInfo {
                    broker: *n,
                    workload: neighbor.in_flight,
                    delay: delays.get(broker, *n),
                    provider_types: live.iter().flat_map(|e| e.prices.keys().cloned()).collect::<BTreeSet<ResourceType>>(),
                    provider_count: live.len(),
                })
            })
            .collect()
    }

    /// Conversations that have not reached done or failed.
    pub fn open_conversations(&self) -> Vec<ConversationId> {
        self.consumers.iter().filter(|(_, c)| !c.phase.is_terminal()).map(|(id, _)| *id).collect()
    }
}

fn provider_state(spec: &ProviderSpec) -> ProviderState {
    ProviderState::new(AgentId::provider(spec.id), spec.capacity.clone(), spec.prices.clone())
}

/// Adds or removes a provider from the global registry. Returns the
/// conversations whose holds were cancelled by a departure.
pub fn apply_churn(world: &mut World, ev: &ChurnEvent) -> Result<Vec<ConversationId>, EngineError> {
    match &ev.action {
        ChurnAction::Leave(provider) => {
            if !world.live.remove(provider) {
                return Err(EngineError::Churn { time: ev.time, reason: format!("{provider} is not a live provider") });
            }
            Ok(world.providers.get_mut(provider).map(ProviderState::release_all_holds).unwrap_or_default())
        }
        ChurnAction::Join(spec) => {
            let id = AgentId::provider(spec.id);
            if world.live.contains(&id) {
                return Err(EngineError::Churn { time: ev.time, reason: format!("{id} is already live") });
            }
            match world.providers.get_mut(&id) {
                // a returning provider keeps its ledger so late messages still resolve
                Some(state) => {
                    state.capacity = spec.capacity.clone();
                    state.base_prices = spec.prices.clone();
                }
                None => {
                    world.providers.insert(id, provider_state(spec));
                }
            }
            world.live.insert(id);
            Ok(Vec::new())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    /// The queue drained with every conversation terminal.
    Quiescent,
    /// The event budget ran out first.
    BudgetExceeded { open: Vec<ConversationId> },
    /// The queue drained but some conversations never finished.
    Stalled { open: Vec<ConversationId> },
}

impl RunStatus {
    pub fn is_quiescent(&self) -> bool {
        matches!(self, RunStatus::Quiescent)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<EventRecord>,
    pub world: World,
    pub status: RunStatus,
}

/// Runs `scenario` to quiescence or until its event budget is spent.
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunOutput, EngineError> {
    run_with_budget(scenario, seed, scenario.settings.event_budget)
}

pub fn run_with_budget(scenario: &Scenario, seed: u64, budget: u64) -> Result<RunOutput, EngineError> {
    let mut engine = Engine::new(scenario, seed);
    let status = engine.run(budget)?;
    Ok(RunOutput { trace: engine.trace, world: engine.world, status })
}

struct Engine<'a> {
    world: World,
    queue: EventQueue,
    rng: ChaCha8Rng,
    delays: DelayMatrix,
    params: &'a PricingParams,
    criteria: &'a CriteriaConfig,
    max_mig: u32,
    hold_timeout: Time,
    jitter: Time,
    task_durations: BTreeMap<ConversationId, Time>,
    trace: Vec<EventRecord>,
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, seed: u64) -> Self {
        let mut delays = DelayMatrix::new(scenario.settings.default_delay);
        for d in &scenario.delays {
            delays.insert(d.a, d.b, d.delay);
        }
        let mut queue = EventQueue::new();
        // churn is queued first so it precedes same-time requests
        for c in &scenario.churn {
            let action = match (&c.join, c.leave) {
                (Some(spec), _) => ChurnAction::Join(spec.clone()),
                (None, Some(id)) => ChurnAction::Leave(AgentId::provider(id)),
                (None, None) => continue,
            };
            queue.schedule(c.time, EventKind::Churn(ChurnEvent { time: c.time, action }));
        }
        let mut task_durations = BTreeMap::new();
        for c in &scenario.consumers {
            for (seq, spec) in c.requests.iter().enumerate() {
                let conv = ConversationId { consumer: AgentId::consumer(c.id), seq: seq as u32 };
                task_durations.insert(conv, spec.task_duration);
                queue.schedule(spec.issue, EventKind::ConsumerStart(conv));
            }
        }
        Self {
            world: World::from_scenario(scenario),
            queue,
            rng: ChaCha8Rng::seed_from_u64(seed),
            delays,
            params: &scenario.pricing,
            criteria: &scenario.criteria,
            max_mig: scenario.max_mig(),
            hold_timeout: scenario.settings.hold_timeout,
            jitter: scenario.settings.delay_jitter,
            task_durations,
            trace: Vec::new(),
        }
    }

    fn run(&mut self, budget: u64) -> Result<RunStatus, EngineError> {
        while let Some(event) = self.queue.pop() {
            if self.world.audit.events >= budget {
                self.queue.push(event);
                return Ok(RunStatus::BudgetExceeded { open: self.world.open_conversations() });
            }
            self.world.audit.events += 1;
            self.world.audit.end_time = event.time;
            self.handle(event)?;
        }
        let open = self.world.open_conversations();
        Ok(if open.is_empty() { RunStatus::Quiescent } else { RunStatus::Stalled { open } })
    }

    #[allow(clippy::too_many_arguments)]
    fn record(&mut self, event: &Event, kind: RecordKind, from: Option<AgentId>, to: Option<AgentId>, action: &str, conversation: Option<ConversationId>, digest: String) {
        self.trace.push(EventRecord {
            time: event.time,
            seq: event.seq,
            kind,
            from,
            to,
            action: action.to_string(),
            conversation,
            digest,
        });
    }

    fn send(&mut self, msg: Message, now: Time) {
        debug_assert_eq!(msg.validate(), Ok(()), "{msg:?}");
        let seq = self.queue.next_seq();
        let mut event = deliver(msg, &self.delays, now, seq);
        if self.jitter > 0 {
            event.time += self.rng.gen_range(0..=self.jitter);
        }
        self.queue.push(event);
    }

    fn protocol(time: Time) -> impl Fn(ProtocolError) -> EngineError {
        move |source| EngineError::Protocol { time, source }
    }

    fn handle(&mut self, event: Event) -> Result<(), EngineError> {
        let now = event.time;
        match &event.kind {
            EventKind::ConsumerStart(conv) => {
                let conv = *conv;
                let consumer = self.world.consumers.get_mut(&conv).expect("scheduled from the scenario");
                let cfp = consumer.start().map_err(Self::protocol(now))?;
                let request = consumer.request.clone();
                let quotes = self.quotes(&request);
                self.world.audit.conversations.insert(
                    conv,
                    ConversationLog {
                        request,
                        issued_at: now,
                        quotes,
                        last_selection: None,
                        outcome: None,
                        paid: None,
                        provider: None,
                    },
                );
                self.record(&event, RecordKind::Start, Some(conv.consumer), Some(cfp.to), "issue", Some(conv), cfp.payload.digest());
                self.send(cfp, now);
            }
            EventKind::Deliver(msg) => self.deliver_message(&event, msg)?,
            EventKind::Churn(churn) => {
                let cancelled = apply_churn(&mut self.world, churn)?;
                let (action, target) = match &churn.action {
                    ChurnAction::Join(spec) => ("join", AgentId::provider(spec.id)),
                    ChurnAction::Leave(id) => ("leave", *id),
                };
                let digest = if cancelled.is_empty() {
                    "-".to_string()
                } else {
                    format!("cancelled={}", cancelled.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("+"))
                };
                self.record(&event, RecordKind::Churn, None, Some(target), action, None, digest);
            }
            EventKind::HoldExpiry { provider, conversation, slot } => {
                let released = self.world.providers.get_mut(provider).is_some_and(|p| p.expire_hold(*slot));
                let digest = if released { "released" } else { "stale" };
                self.record(&event, RecordKind::Expire, None, Some(*provider), "hold-expiry", Some(*conversation), digest.into());
            }
            EventKind::TaskComplete { conversation, on_time } => {
                let consumer = self.world.consumers.get_mut(conversation).expect("running consumer");
                let feedback = consumer.complete(*on_time, self.params).map_err(Self::protocol(now))?;
                let (paid, provider) = (consumer.paid, consumer.provider);
                if let Some(log) = self.world.audit.conversations.get_mut(conversation) {
                    log.outcome = Some((Outcome::Done, now));
                    log.paid = paid;
                    log.provider = provider;
                }
                let digest = format!("on_time={on_time}");
                self.record(&event, RecordKind::Complete, Some(conversation.consumer), provider, "task-complete", Some(*conversation), digest);
                self.send(feedback, now);
            }
        }
        Ok(())
    }

    fn quotes(&self, request: &Request) -> Vec<Quote> {
        let p = self.params.period(request);
        self.world
            .live
            .iter()
            .filter_map(|id| self.world.providers.get(id))
            .map(|provider| {
                let covers = request.bundle.types().all(|r| provider.capacity.contains_key(r));
                let cost = if covers {
                    provider
                        .expected_prices(self.params.alpha)
                        .ok()
                        .and_then(|prices| total_cost(&request.bundle, &prices, p).ok())
                } else {
                    None
                };
                let fits = covers && provider.availability(&request.bundle, request.est, request.dlt) == Allocation::Hold;
                let feasible = fits && cost.is_some_and(|c| c <= request.pl);
                Quote { provider: provider.id, cost, fits, feasible }
            })
            .collect()
    }

    fn deliver_message(&mut self, event: &Event, msg: &Message) -> Result<(), EngineError> {
        let now = event.time;
        let to_departed = msg.to.kind == AgentKind::Provider && !self.world.is_live(msg.to);
        let kind = if to_departed { RecordKind::Drop } else { RecordKind::Deliver };
        self.record(event, kind, Some(msg.from), Some(msg.to), msg.performative.as_str(), Some(msg.conversation), msg.payload.digest());
        match msg.to.kind {
            AgentKind::Consumer => self.deliver_to_consumer(msg, now),
            AgentKind::Broker => self.deliver_to_broker(msg, now),
            AgentKind::Provider if to_departed => {
                // a departed provider can no longer answer; the broker sees a refusal
                if matches!(msg.performative, Performative::Cfp | Performative::Confirm) {
                    let refusal = Message::new(
                        Performative::Refuse,
                        msg.conversation,
                        msg.to,
                        msg.from,
                        Payload::DemandRatio { ratios: BTreeMap::new(), capacity_short: true },
                    );
                    self.send(refusal, now);
                }
                Ok(())
            }
            AgentKind::Provider => self.deliver_to_provider(msg, now),
        }
    }

    fn deliver_to_consumer(&mut self, msg: &Message, now: Time) -> Result<(), EngineError> {
        let Some(consumer) = self.world.consumers.get_mut(&msg.conversation) else {
            return Err(EngineError::UnknownAgent { time: now, agent: msg.to });
        };
        let out = consumer.step(msg).map_err(Self::protocol(now))?;
        match consumer.phase {
            ConsumerPhase::Running if msg.performative == Performative::Confirm => {
                let request = &consumer.request;
                let duration = self.task_durations.get(&msg.conversation).copied().unwrap_or(0);
                let start = now.max(request.est);
                let finish = start + duration;
                let at = if start < request.dlt { finish.min(request.dlt) } else { start };
                let on_time = finish <= request.dlt;
                self.queue.schedule(at, EventKind::TaskComplete { conversation: msg.conversation, on_time });
            }
            ConsumerPhase::Failed => {
                if let Some(log) = self.world.audit.conversations.get_mut(&msg.conversation) {
                    log.outcome = Some((Outcome::Failed, now));
                }
            }
            _ => {}
        }
        for m in out {
            self.send(m, now);
        }
        Ok(())
    }

    fn deliver_to_broker(&mut self, msg: &Message, now: Time) -> Result<(), EngineError> {
        let registry_view = self.world.registry_view(msg.to, &self.delays);
        let neighbors = self.world.neighbor_infos(msg.to, &self.delays);
        let env = BrokerEnv {
            now,
            registry_view: &registry_view,
            neighbors: &neighbors,
            max_mig: self.max_mig,
            params: self.params,
            criteria: self.criteria,
        };
        let Some(broker) = self.world.brokers.get_mut(&msg.to) else {
            return Err(EngineError::UnknownAgent { time: now, agent: msg.to });
        };
        let before = broker.in_flight;
        let out = broker.step(msg, &env).map_err(Self::protocol(now))?;
        let after = broker.in_flight;
        if after != before {
            self.world.audit.workload.push(WorkloadSample { time: now, broker: msg.to, in_flight: after });
        }
        if let Some(selection) = out.selection {
            if let Some(log) = self.world.audit.conversations.get_mut(&msg.conversation) {
                log.last_selection = Some(selection);
            }
        }
        if let Some(target) = out.migrated_to {
            self.migrate(msg, target, &out.messages, &neighbors, now)?;
        }
        for m in out.messages {
            self.send(m, now);
        }
        Ok(())
    }

    /// Moves one unit of in-flight workload from the source to the target
    /// broker in the same step that forwards the CFP.
    fn migrate(&mut self, msg: &Message, target: AgentId, out: &[Message], neighbors: &[NeighborInfo], now: Time) -> Result<(), EngineError> {
        let source = msg.to;
        let forwarded = out
            .iter()
            .find_map(|m| match (&m.payload, m.performative) {
                (Payload::Request(r), Performative::Cfp) if m.to == target => Some(r),
                _ => None,
            })
            .expect("a migration forwards the request");
        let src = self.world.brokers[&source].in_flight;
        let dst = self.world.brokers[&target].in_flight;
        let (new_src, new_dst) = reestablish_coherence(src, dst).map_err(|e| EngineError::Churn {
            time: now,
            reason: format!("migration {source}->{target}: {e}"),
        })?;
        self.world.brokers.get_mut(&source).expect("source exists").in_flight = new_src;
        self.world.brokers.get_mut(&target).expect("target exists").in_flight = new_dst;
        for (broker, in_flight) in [(source, new_src), (target, new_dst)] {
            self.world.audit.workload.push(WorkloadSample { time: now, broker, in_flight });
        }
        self.world.audit.migrations.push(MigrationRecord {
            time: now,
            conversation: msg.conversation,
            from: source,
            to: target,
            nbre_mig: forwarded.nbre_mig,
            visited: forwarded.visited.clone(),
            target: neighbors.iter().find(|n| n.broker == target).cloned().expect("target is a neighbor"),
            workload_before: (src, dst),
            workload_after: (new_src, new_dst),
        });
        Ok(())
    }

    fn deliver_to_provider(&mut self, msg: &Message, now: Time) -> Result<(), EngineError> {
        let Some(provider) = self.world.providers.get_mut(&msg.to) else {
            return Err(EngineError::UnknownAgent { time: now, agent: msg.to });
        };
        let out = provider.step(msg, self.params).map_err(Self::protocol(now))?;
        let placed_hold = msg.performative == Performative::Cfp
            && out.iter().any(|m| m.performative == Performative::Propose);
        if placed_hold {
            let slot = provider.ledger.len() - 1;
            self.queue.schedule(
                now + self.hold_timeout,
                EventKind::HoldExpiry { provider: msg.to, conversation: msg.conversation, slot },
            );
        }
        for m in out {
            self.send(m, now);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    const ONE_OF_EACH: &str = r#"
resource_types = ["cpu"]

[[brokers]]
id = 0
visibility = [0]

[[providers]]
id = 0
capacity = { cpu = 4 }
prices = { cpu = 2.0 }

[[consumers]]
id = 0
broker = 0
[[consumers.requests]]
issue = 0
est = 0
dlt = 10
pl = 100.0
task_duration = 5
bundle = { cpu = 1 }
"#;

    #[test]
    fn registry_and_churn() {
        let scenario = Scenario::from_toml_str(ONE_OF_EACH).unwrap();
        let mut world = World::from_scenario(&scenario);
        let delays = DelayMatrix::new(1);
        assert_eq!(world.registry_view(AgentId::broker(0), &delays).len(), 1);
        let leave = ChurnEvent { time: 3, action: ChurnAction::Leave(AgentId::provider(0)) };
        apply_churn(&mut world, &leave).unwrap();
        assert!(world.registry_view(AgentId::broker(0), &delays).is_empty());
        assert!(apply_churn(&mut world, &leave).is_err());
        let unknown = ChurnEvent { time: 3, action: ChurnAction::Leave(AgentId::provider(9)) };
        assert!(matches!(apply_churn(&mut world, &unknown), Err(EngineError::Churn { .. })));
    }

    #[test]
    fn join_is_visible_only_where_declared() {
        let text = ONE_OF_EACH.replace("visibility = [0]", "visibility = [0, 9]")
            + "\n[[brokers]]\nid = 1\nvisibility = [0]\n"
            + "\n[[churn]]\ntime = 1\n[churn.join]\nid = 9\ncapacity = { cpu = 1 }\nprices = { cpu = 1.0 }\n";
        let scenario = Scenario::from_toml_str(&text).unwrap();
        let mut world = World::from_scenario(&scenario);
        let join = ChurnEvent { time: 1, action: ChurnAction::Join(scenario.churn[0].join.clone().unwrap()) };
        apply_churn(&mut world, &join).unwrap();
        let delays = DelayMatrix::new(1);
        let ids = |b| world.registry_view(AgentId::broker(b), &delays).iter().map(|e| e.provider).collect::<Vec<_>>();
        assert_eq!(ids(0), vec![AgentId::provider(0), AgentId::provider(9)]);
        assert_eq!(ids(1), vec![AgentId::provider(0)]);
    }

    #[test]
    fn single_path_runs_to_quiescence() {
        let scenario = Scenario::from_toml_str(ONE_OF_EACH).unwrap();
        let out = run(&scenario, 1).unwrap();
        assert_eq!(out.status, RunStatus::Quiescent);
        let log = &out.world.audit.conversations.values().next().unwrap();
        assert_eq!(log.outcome.map(|o| o.0), Some(Outcome::Done));
        // lease of 10 units at 2.00
        assert_eq!(log.paid, Some(Money::from_cents(2000)));
        assert!(out.world.brokers.values().all(|b| b.in_flight == 0 && b.conversations.is_empty()));
    }
}
