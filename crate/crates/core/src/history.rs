//! Recorded histories of invocation and response events.
//!
//! On disk a history is line-delimited JSON, one [`HistoryEvent`] per line:
//!
//! ```text
//! {"index":0,"kind":"invoke","process":"w1","op":{"type":"write","value":{"kind":"data","bytes":"61","writer":"w1","nonce":1}},"op_id":{"invoker":"w1","seq":1}}
//! {"index":7,"kind":"respond","process":"w1","op":{"type":"write","value":{...}},"result":{"tag":{"ts":1,"wid":"w1"},"value":{...}},"op_id":{"invoker":"w1","seq":1}}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::Invocation;
use crate::types::{OpId, ProcessId, TaggedValue};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Invoke,
    Respond,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEvent {
    /// Position in real time; smaller means earlier.
    pub index: u64,
    pub kind: EventKind,
    pub process: ProcessId,
    pub op: Invocation,
    /// Set on responses: the returned pair for reads, the written pair for
    /// writes. Absent when the producer does not know tags.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<TaggedValue>,
    pub op_id: OpId,
}

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("response to {0} has no matching invocation")]
    UnmatchedResponse(OpId),
    #[error("{process} invoked {op} while {pending} was still pending")]
    NotWellFormed { process: ProcessId, op: OpId, pending: OpId },
    #[error("operation {0} was invoked twice")]
    DuplicateOp(OpId),
    #[error("events are not ordered by index at position {0}")]
    Unordered(usize),
}

/// A complete or pending operation reconstructed from its events.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Operation {
    pub op_id: OpId,
    pub process: ProcessId,
    pub invocation: Invocation,
    pub invoked_at: u64,
    pub responded_at: Option<u64>,
    pub result: Option<TaggedValue>,
}

impl Operation {
    pub fn is_read(&self) -> bool {
        self.invocation.is_read()
    }

    pub fn is_complete(&self) -> bool {
        self.responded_at.is_some()
    }

    /// Real-time precedence: `self` responded before `other` was invoked.
    pub fn precedes(&self, other: &Operation) -> bool {
        matches!(self.responded_at, Some(r) if r < other.invoked_at)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct History {
    pub events: Vec<HistoryEvent>,
}

impl History {
    pub fn new(events: Vec<HistoryEvent>) -> Self {
        History { events }
    }

    pub fn push(&mut self, event: HistoryEvent) {
        self.events.push(event);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("history events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, HistoryError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(line).map_err(|source| HistoryError::Parse { line: i + 1, source })?;
            events.push(event);
        }
        Ok(History { events })
    }

    /// Merge per-client histories recorded against a shared clock.
    pub fn merge(parts: impl IntoIterator<Item = History>) -> History {
        let mut events: Vec<HistoryEvent> = parts.into_iter().flat_map(|h| h.events).collect();
        events.sort_by(|a, b| {
            (a.index, a.process, a.kind == EventKind::Respond).cmp(&(b.index, b.process, b.kind == EventKind::Respond))
        });
        History { events }
    }

    /// Pair invocations with responses, checking per-process
    /// well-formedness. Operations are returned in invocation order.
    pub fn operations(&self) -> Result<Vec<Operation>, HistoryError> {
        let mut ops: Vec<Operation> = Vec::new();
        let mut by_id: BTreeMap<OpId, usize> = BTreeMap::new();
        let mut pending: BTreeMap<ProcessId, OpId> = BTreeMap::new();
        let mut last_index = None;
        for (pos, e) in self.events.iter().enumerate() {
            if matches!(last_index, Some(prev) if e.index < prev) {
                return Err(HistoryError::Unordered(pos));
            }
            last_index = Some(e.index);
            match e.kind {
                EventKind::Invoke => {
                    if let Some(p) = pending.get(&e.process) {
                        return Err(HistoryError::NotWellFormed {
                            process: e.process,
                            op: e.op_id,
                            pending: *p,
                        });
                    }
                    if by_id.insert(e.op_id, ops.len()).is_some() {
                        return Err(HistoryError::DuplicateOp(e.op_id));
                    }
                    pending.insert(e.process, e.op_id);
                    ops.push(Operation {
                        op_id: e.op_id,
                        process: e.process,
                        invocation: e.op.clone(),
                        invoked_at: e.index,
                        responded_at: None,
                        result: None,
                    });
                }
                EventKind::Respond => {
                    let idx = match (by_id.get(&e.op_id), pending.get(&e.process)) {
                        (Some(idx), Some(p)) if *p == e.op_id => *idx,
                        _ => return Err(HistoryError::UnmatchedResponse(e.op_id)),
                    };
                    pending.remove(&e.process);
                    ops[idx].responded_at = Some(e.index);
                    ops[idx].result = e.result.clone();
                }
            }
        }
        Ok(ops)
    }
}
