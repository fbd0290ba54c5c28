//! Message and exchange accounting per operation.
//!
//! Every message is charged to the client operation it serves. One
//! communication exchange is one distinct message kind on that operation's
//! path, so a relay read that uses `readRequest`, `readRelay` and `readAck`
//! costs three exchanges.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::protocol::Protocol;
use crate::types::{MessageKind, OpId, ProcessId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Read,
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpMetrics {
    pub op_id: OpId,
    pub process: ProcessId,
    pub kind: OpKind,
    pub completed: bool,
    /// Messages sent on behalf of the operation, by kind.
    pub messages: BTreeMap<MessageKind, u64>,
    pub total_messages: u64,
    pub exchanges: usize,
    /// Servers whose replies reached the client before it responded.
    pub acknowledgers: BTreeMap<MessageKind, BTreeSet<ProcessId>>,
}

impl OpMetrics {
    fn new(op_id: OpId, process: ProcessId, kind: OpKind) -> Self {
        OpMetrics {
            op_id,
            process,
            kind,
            completed: false,
            messages: BTreeMap::new(),
            total_messages: 0,
            exchanges: 0,
            acknowledgers: BTreeMap::new(),
        }
    }

    pub fn count(&self, kind: MessageKind) -> u64 {
        self.messages.get(&kind).copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpSummary {
    pub count: usize,
    pub total_messages: u64,
    pub min_messages: u64,
    pub max_messages: u64,
    pub min_exchanges: usize,
    pub max_exchanges: usize,
}

impl OpSummary {
    fn of<'a>(ops: impl Iterator<Item = &'a OpMetrics>) -> Option<Self> {
        let ops: Vec<&OpMetrics> = ops.collect();
        if ops.is_empty() {
            return None;
        }
        Some(OpSummary {
            count: ops.len(),
            total_messages: ops.iter().map(|o| o.total_messages).sum(),
            min_messages: ops.iter().map(|o| o.total_messages).min().unwrap_or(0),
            max_messages: ops.iter().map(|o| o.total_messages).max().unwrap_or(0),
            min_exchanges: ops.iter().map(|o| o.exchanges).min().unwrap_or(0),
            max_exchanges: ops.iter().map(|o| o.exchanges).max().unwrap_or(0),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregate {
    pub ops: usize,
    pub completed_ops: usize,
    pub total_messages: u64,
    pub by_kind: BTreeMap<MessageKind, u64>,
    /// Messages whose operation could not be identified.
    pub unattributed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reads: Option<OpSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub writes: Option<OpSummary>,
}

/// The metrics report: one entry per operation in invocation order plus
/// aggregate totals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_op: Vec<OpMetrics>,
    pub aggregate: Aggregate,
}

impl Metrics {
    pub fn op(&self, op_id: OpId) -> Option<&OpMetrics> {
        self.per_op.iter().find(|o| o.op_id == op_id)
    }

    pub fn reads(&self) -> impl Iterator<Item = &OpMetrics> {
        self.per_op.iter().filter(|o| o.kind == OpKind::Read)
    }

    pub fn writes(&self) -> impl Iterator<Item = &OpMetrics> {
        self.per_op.iter().filter(|o| o.kind == OpKind::Write)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

/// Cost of one failure-free operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cost {
    pub exchanges: usize,
    pub messages: u64,
}

impl Cost {
    pub fn of(op: &OpMetrics) -> Self {
        Cost {
            exchanges: op.exchanges,
            messages: op.total_messages,
        }
    }
}

/// Closed-form `(read, write)` costs with `n` servers and no failures.
pub fn expected_costs(protocol: Protocol, n: usize) -> (Cost, Cost) {
    let n = n as u64;
    let cost = |exchanges, messages| Cost { exchanges, messages };
    let relay_read = cost(3, n * n + 2 * n);
    let two_round = cost(4, 4 * n);
    match protocol {
        Protocol::OhSam => (relay_read, cost(2, 2 * n)),
        Protocol::OhMam => (relay_read, two_round),
        Protocol::AbdSwmr => (two_round, cost(2, 2 * n)),
        Protocol::AbdMwmr => (two_round, two_round),
        Protocol::Naive3x => (relay_read, cost(3, n * n + 2 * n)),
    }
}

/// Builds [`Metrics`] while a run progresses.
#[derive(Debug, Default)]
pub struct MetricsRecorder {
    ops: Vec<OpMetrics>,
    owner: BTreeMap<OpId, usize>,
    unattributed: u64,
}

impl MetricsRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start accounting for an operation. Returns its slot.
    pub fn begin(&mut self, op_id: OpId, process: ProcessId, kind: OpKind) -> usize {
        let slot = self.ops.len();
        self.ops.push(OpMetrics::new(op_id, process, kind));
        self.owner.insert(op_id, slot);
        slot
    }

    /// Route messages carrying `op` to `slot`. Needed when one client
    /// operation uses several protocol operation ids.
    pub fn alias(&mut self, op: OpId, slot: usize) {
        self.owner.entry(op).or_insert(slot);
    }

    pub fn slot_of(&self, op: OpId) -> Option<usize> {
        self.owner.get(&op).copied()
    }

    pub fn sent(&mut self, op: OpId, kind: MessageKind) {
        match self.owner.get(&op) {
            Some(&slot) => {
                let m = &mut self.ops[slot];
                *m.messages.entry(kind).or_insert(0) += 1;
                m.total_messages += 1;
            }
            None => self.unattributed += 1,
        }
    }

    pub fn acknowledged(&mut self, slot: usize, kind: MessageKind, server: ProcessId) {
        self.ops[slot].acknowledgers.entry(kind).or_default().insert(server);
    }

    pub fn completed(&mut self, slot: usize) {
        self.ops[slot].completed = true;
    }

    pub fn is_completed(&self, slot: usize) -> bool {
        self.ops[slot].completed
    }

    pub fn finish(self) -> Metrics {
        let mut per_op = self.ops;
        let mut by_kind: BTreeMap<MessageKind, u64> = BTreeMap::new();
        for op in &mut per_op {
            op.exchanges = op.messages.len();
            for (k, c) in &op.messages {
                *by_kind.entry(*k).or_insert(0) += c;
            }
        }
        let aggregate = Aggregate {
            ops: per_op.len(),
            completed_ops: per_op.iter().filter(|o| o.completed).count(),
            total_messages: by_kind.values().sum::<u64>() + self.unattributed,
            by_kind,
            unattributed: self.unattributed,
            reads: OpSummary::of(per_op.iter().filter(|o| o.kind == OpKind::Read)),
            writes: OpSummary::of(per_op.iter().filter(|o| o.kind == OpKind::Write)),
        };
        Metrics { per_op, aggregate }
    }
}
