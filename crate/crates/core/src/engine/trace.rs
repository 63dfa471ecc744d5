use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use crate::model::{AgentId, ConversationId, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RecordKind {
    /// A consumer issued its request.
    Start,
    /// A message reached its recipient.
    Deliver,
    /// A message addressed to a departed provider.
    Drop,
    Churn,
    /// A provider hold timed out.
    Expire,
    /// A consumer's task finished running.
    Complete,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Start => "start",
            RecordKind::Deliver => "deliver",
            RecordKind::Drop => "drop",
            RecordKind::Churn => "churn",
            RecordKind::Expire => "expire",
            RecordKind::Complete => "complete",
        }
    }
}

impl FromStr for RecordKind {
    type Err = TraceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "start" => RecordKind::Start,
            "deliver" => RecordKind::Deliver,
            "drop" => RecordKind::Drop,
            "churn" => RecordKind::Churn,
            "expire" => RecordKind::Expire,
            "complete" => RecordKind::Complete,
            other => return Err(TraceParseError(format!("unknown record kind `{other}`"))),
        })
    }
}

/// One line of the run trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub time: Time,
    pub seq: u64,
    pub kind: RecordKind,
    pub from: Option<AgentId>,
    pub to: Option<AgentId>,
    /// Performative name for messages, otherwise what happened.
    pub action: String,
    pub conversation: Option<ConversationId>,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed trace line: {0}")]
pub struct TraceParseError(String);

fn opt<T: fmt::Display>(value: &Option<T>) -> String {
    value.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

impl fmt::Display for EventRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.time,
            self.seq,
            self.kind.as_str(),
            opt(&self.from),
            opt(&self.to),
            self.action,
            opt(&self.conversation),
            self.digest
        )
    }
}

fn parse_conversation(s: &str) -> Result<ConversationId, TraceParseError> {
    let bad = || TraceParseError(format!("bad conversation `{s}`"));
    let (consumer, seq) = s.split_once('#').ok_or_else(bad)?;
    Ok(ConversationId {
        consumer: consumer.parse().map_err(|_| bad())?,
        seq: seq.parse().map_err(|_| bad())?,
    })
}

impl FromStr for EventRecord {
    type Err = TraceParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = line.split('\t').collect();
        let [time, seq, kind, from, to, action, conversation, digest] = fields[..] else {
            return Err(TraceParseError(format!("expected 8 fields, got {}", fields.len())));
        };
        let agent = |s: &str| -> Result<Option<AgentId>, TraceParseError> {
            if s == "-" {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| TraceParseError(format!("bad agent `{s}`")))
        };
        Ok(EventRecord {
            time: time.parse().map_err(|_| TraceParseError(format!("bad time `{time}`")))?,
            seq: seq.parse().map_err(|_| TraceParseError(format!("bad seq `{seq}`")))?,
            kind: kind.parse()?,
            from: agent(from)?,
            to: agent(to)?,
            action: action.to_string(),
            conversation: if conversation == "-" { None } else { Some(parse_conversation(conversation)?) },
            digest: digest.to_string(),
        })
    }
}

pub fn write_trace<W: Write>(mut out: W, trace: &[EventRecord]) -> io::Result<()> {
    for record in trace {
        writeln!(out, "{record}")?;
    }
    out.flush()
}

pub fn trace_to_string(trace: &[EventRecord]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, trace).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("trace is ASCII")
}

pub fn parse_trace(text: &str) -> Result<Vec<EventRecord>, TraceParseError> {
    text.lines().filter(|l| !l.is_empty()).map(str::parse).collect()
}
