use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use crate::model::{AgentId, ConversationId, Message, Time};
use crate::scenario::ProviderSpec;

#[derive(Debug, Clone, PartialEq)]
pub enum ChurnAction {
    Join(ProviderSpec),
    Leave(AgentId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChurnEvent {
    pub time: Time,
    pub action: ChurnAction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Deliver(Message),
    Churn(ChurnEvent),
    ConsumerStart(ConversationId),
    /// `slot` is the reservation's index in the provider ledger.
    HoldExpiry { provider: AgentId, conversation: ConversationId, slot: usize },
    TaskComplete { conversation: ConversationId, on_time: bool },
}

/// A scheduled event. Queue order is `(time, seq)`; `seq` is unique per run.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: Time,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// Symmetric link delays with a fallback for unlisted pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMatrix {
    pairs: BTreeMap<(AgentId, AgentId), Time>,
    pub default: Time,
}

impl DelayMatrix {
    pub fn new(default: Time) -> Self {
        Self { pairs: BTreeMap::new(), default }
    }

    pub fn insert(&mut self, a: AgentId, b: AgentId, delay: Time) {
        self.pairs.insert(ordered(a, b), delay);
    }

    pub fn get(&self, a: AgentId, b: AgentId) -> Time {
        self.pairs.get(&ordered(a, b)).copied().unwrap_or(self.default)
    }
}

fn ordered(a: AgentId, b: AgentId) -> (AgentId, AgentId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Schedules `msg` for arrival after the link delay between its endpoints.
pub fn deliver(msg: Message, delays: &DelayMatrix, now: Time, seq: u64) -> Event {
    let time = now + delays.get(msg.from, msg.to);
    Event { time, seq, kind: EventKind::Deliver(msg) }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_seq(&mut self) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        seq
    }

    pub fn schedule(&mut self, time: Time, kind: EventKind) -> u64 {
        let seq = self.next_seq();
        self.heap.push(Reverse(Event { time, seq, kind }));
        seq
    }

    pub fn push(&mut self, event: Event) {
        debug_assert!(event.seq < self.next_seq, "seq must come from this queue");
        self.heap.push(Reverse(event));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}
