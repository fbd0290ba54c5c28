//! A deliberately unsound multi-writer protocol whose writes take three
//! exchanges: `writeRequest` (writer → servers), `writeRelay` (server → all
//! servers) and `writeAck` (server → writer once a majority of relays for
//! the write has arrived). Reads use the three-exchange relay read.
//!
//! Servers order concurrent writes from relay evidence alone. Every relay
//! carries the relayer's local receipt order of writes. For two writes `a`
//! and `b` (with `a.op < b.op`), a server that answers a read declares
//! `a` before `b` unless at least `|S| - x + 1` of the relays it counted saw
//! `b` first. With all `|S|` relays present this is exactly "at least `x`
//! relays saw `a` first"; with one relay missing it favours `a`-before-`b`.
//!
//! This protocol exists to replay the scripted executions that break
//! atomicity. It is never offered by the network runner.

use std::collections::{BTreeMap, BTreeSet};

use crate::node::{ClientNode, ClientStep, Completion, Invocation, Invoked, ProtocolError, ServerNode};
use crate::types::{
    broadcast, quorum_size, Message, MessageKind, ObservedWrite, OpId, ProcessId, Tag, TaggedValue, Value,
};

pub use crate::ohsam::Reader;

/// Default decision threshold: ⌈|S|/2⌉.
pub fn default_threshold(n_servers: usize) -> usize {
    n_servers.div_ceil(2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precedence {
    FirstBeforeSecond,
    SecondBeforeFirst,
}

/// Whether a relayer's receipt order puts `second` ahead of `first`. A
/// relayer that saw only `second` counts as seeing it first.
fn saw_second_first(observed: &[ObservedWrite], first: OpId, second: OpId) -> bool {
    let pos = |op: OpId| observed.iter().position(|w| w.op == op);
    match (pos(first), pos(second)) {
        (Some(a), Some(b)) => b < a,
        (None, Some(_)) => true,
        _ => false,
    }
}

/// Decide the order of two writes from the relays a server has counted.
pub fn order_writes(
    first: OpId,
    second: OpId,
    relays: &[&[ObservedWrite]],
    n_servers: usize,
    threshold: usize,
) -> Precedence {
    let against = relays
        .iter()
        .filter(|observed| saw_second_first(observed, first, second))
        .count();
    if against + threshold > n_servers {
        Precedence::SecondBeforeFirst
    } else {
        Precedence::FirstBeforeSecond
    }
}

/// Does `a` precede `b` under the relay evidence? Orientation is canonical
/// (smaller op id first) so every server asks the same question.
fn precedes(a: &ObservedWrite, b: &ObservedWrite, relays: &[&[ObservedWrite]], n: usize, x: usize) -> bool {
    if a.op < b.op {
        order_writes(a.op, b.op, relays, n, x) == Precedence::FirstBeforeSecond
    } else {
        order_writes(b.op, a.op, relays, n, x) == Precedence::SecondBeforeFirst
    }
}

/// The pair a server serves: the last write under the declared order,
/// tagged with its position in that order.
pub fn decide(relays: &[&[ObservedWrite]], n_servers: usize, threshold: usize) -> TaggedValue {
    let mut known: BTreeMap<OpId, &ObservedWrite> = BTreeMap::new();
    for w in relays.iter().flat_map(|r| r.iter()) {
        known.entry(w.op).or_insert(w);
    }
    let mut candidates = known.values().copied();
    let Some(mut latest) = candidates.next() else {
        return TaggedValue::initial();
    };
    for c in candidates {
        if precedes(latest, c, relays, n_servers, threshold) {
            latest = c;
        }
    }
    let rank = 1 + known
        .values()
        .filter(|c| c.op != latest.op && precedes(c, latest, relays, n_servers, threshold))
        .count() as u64;
    TaggedValue::new(Tag::new(rank, latest.op.invoker), latest.value.clone())
}

#[derive(Clone, Debug)]
pub struct Writer {
    id: ProcessId,
    servers: Vec<ProcessId>,
    write_op: u64,
    pending: Option<Value>,
    acks: BTreeMap<ProcessId, u64>,
}

impl Writer {
    pub fn new(id: ProcessId, servers: Vec<ProcessId>) -> Self {
        Writer {
            id,
            servers,
            write_op: 0,
            pending: None,
            acks: BTreeMap::new(),
        }
    }

    pub fn invoke(&mut self, value: Value) -> Result<Invoked, ProtocolError> {
        if self.pending.is_some() {
            return Err(ProtocolError::NotWellFormed { process: self.id });
        }
        self.write_op += 1;
        self.acks.clear();
        let op = OpId::new(self.id, self.write_op);
        let payload = TaggedValue::new(Tag::new(self.write_op, self.id), value.clone());
        self.pending = Some(value);
        let messages = broadcast(&self.servers, |s| {
            Message::with_payload(MessageKind::WriteRequest, op, &payload, self.id, s)
        });
        Ok(Invoked { op, messages })
    }

    /// Acks carry the write's position in the acking server's receipt
    /// order; the write completes with the largest position of a majority.
    pub fn on_write_ack(&mut self, msg: &Message) -> ClientStep {
        if msg.kind != MessageKind::WriteAck || self.pending.is_none() || msg.op.seq != self.write_op {
            return ClientStep::idle();
        }
        let Some(tag) = msg.tag else {
            return ClientStep::idle();
        };
        self.acks.insert(msg.sender, tag.ts);
        if self.acks.len() < quorum_size(self.servers.len()) {
            return ClientStep::idle();
        }
        let rank = self.acks.values().copied().max().unwrap_or(1);
        let value = self.pending.take().expect("write is pending");
        ClientStep::complete(Completion {
            op: OpId::new(self.id, self.write_op),
            result: TaggedValue::new(Tag::new(rank, self.id), value),
        })
    }
}

impl ClientNode for Writer {
    fn id(&self) -> ProcessId {
        self.id
    }

    fn invoke(&mut self, invocation: Invocation) -> Result<Invoked, ProtocolError> {
        match invocation {
            Invocation::Write { value } => Writer::invoke(self, value),
            Invocation::Read => Err(ProtocolError::UnsupportedOperation {
                process: self.id,
                op: "read",
            }),
        }
    }

    fn on_message(&mut self, msg: &Message) -> ClientStep {
        self.on_write_ack(msg)
    }

    fn is_idle(&self) -> bool {
        self.pending.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct Server {
    id: ProcessId,
    servers: Vec<ProcessId>,
    threshold: usize,
    order: Vec<ObservedWrite>,
    write_relays: BTreeMap<OpId, BTreeSet<ProcessId>>,
    write_relayed: BTreeSet<OpId>,
    acked_writes: BTreeSet<OpId>,
    read_relays: BTreeMap<OpId, BTreeMap<ProcessId, Vec<ObservedWrite>>>,
    read_relayed: BTreeSet<OpId>,
    acked_reads: BTreeSet<OpId>,
    served: TaggedValue,
}

impl Server {
    pub fn new(id: ProcessId, servers: Vec<ProcessId>, threshold: usize) -> Self {
        Server {
            id,
            servers,
            threshold,
            order: Vec::new(),
            write_relays: BTreeMap::new(),
            write_relayed: BTreeSet::new(),
            acked_writes: BTreeSet::new(),
            read_relays: BTreeMap::new(),
            read_relayed: BTreeSet::new(),
            acked_reads: BTreeSet::new(),
            served: TaggedValue::initial(),
        }
    }

    /// Local receipt order of writes.
    pub fn order(&self) -> &[ObservedWrite] {
        &self.order
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    fn learn(&mut self, op: OpId, value: Option<Value>) {
        if self.order.iter().all(|w| w.op != op) {
            self.order.push(ObservedWrite {
                op,
                value: value.unwrap_or(Value::Bottom),
            });
        }
    }

    fn relay(&self, kind: MessageKind, op: OpId, payload: Option<TaggedValue>) -> Vec<Message> {
        broadcast(&self.servers, |dest| {
            let mut m = match &payload {
                Some(p) => Message::with_payload(kind, op, p, self.id, dest),
                None => Message::bare(kind, op, self.id, dest),
            };
            m.relay_origin = Some(self.id);
            m.observed = Some(self.order.clone());
            m
        })
    }

    pub fn on_write_request(&mut self, msg: &Message) -> Vec<Message> {
        self.learn(msg.op, msg.value.clone());
        if !self.write_relayed.insert(msg.op) {
            return Vec::new();
        }
        self.relay(MessageKind::WriteRelay, msg.op, msg.payload())
    }

    pub fn on_write_relay(&mut self, msg: &Message) -> Vec<Message> {
        self.learn(msg.op, msg.value.clone());
        if self.acked_writes.contains(&msg.op) {
            return Vec::new();
        }
        let relays = self.write_relays.entry(msg.op).or_default();
        relays.insert(msg.relay_origin.unwrap_or(msg.sender));
        if relays.len() < quorum_size(self.servers.len()) {
            return Vec::new();
        }
        self.acked_writes.insert(msg.op);
        let rank = 1 + self.order.iter().position(|w| w.op == msg.op).unwrap_or(0) as u64;
        let value = msg.value.clone().unwrap_or(Value::Bottom);
        vec![Message::with_payload(
            MessageKind::WriteAck,
            msg.op,
            &TaggedValue::new(Tag::new(rank, msg.op.invoker), value),
            self.id,
            msg.op.invoker,
        )]
    }

    pub fn on_read_request(&mut self, msg: &Message) -> Vec<Message> {
        if !self.read_relayed.insert(msg.op) {
            return Vec::new();
        }
        self.relay(MessageKind::ReadRelay, msg.op, None)
    }

    pub fn on_read_relay(&mut self, msg: &Message) -> Vec<Message> {
        if self.acked_reads.contains(&msg.op) {
            return Vec::new();
        }
        let relays = self.read_relays.entry(msg.op).or_default();
        relays.insert(
            msg.relay_origin.unwrap_or(msg.sender),
            msg.observed.clone().unwrap_or_default(),
        );
        if relays.len() < quorum_size(self.servers.len()) {
            return Vec::new();
        }
        let evidence: Vec<&[ObservedWrite]> = relays.values().map(Vec::as_slice).collect();
        let served = decide(&evidence, self.servers.len(), self.threshold);
        self.acked_reads.insert(msg.op);
        self.served = served.clone();
        vec![Message::with_payload(MessageKind::ReadAck, msg.op, &served, self.id, msg.op.invoker)]
    }
}

impl ServerNode for Server {
    fn id(&self) -> ProcessId {
        self.id
    }

    fn on_message(&mut self, msg: &Message) -> Vec<Message> {
        match msg.kind {
            MessageKind::WriteRequest => self.on_write_request(msg),
            MessageKind::WriteRelay => self.on_write_relay(msg),
            MessageKind::ReadRequest => self.on_read_request(msg),
            MessageKind::ReadRelay => self.on_read_relay(msg),
            _ => Vec::new(),
        }
    }

    /// The pair most recently served to a reader.
    fn tag(&self) -> Tag {
        self.served.tag
    }

    fn tags_are_monotone(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(i: u32) -> ProcessId {
        ProcessId::writer(i)
    }

    fn write(i: u32) -> ObservedWrite {
        ObservedWrite {
            op: OpId::new(w(i), 1),
            value: Value::data(if i == 1 { "a" } else { "b" }, w(i), 1),
        }
    }

    fn first_then_second() -> Vec<ObservedWrite> {
        vec![write(1), write(2)]
    }

    fn second_then_first() -> Vec<ObservedWrite> {
        vec![write(2), write(1)]
    }

    fn serve(relays: &[Vec<ObservedWrite>], n: usize, x: usize) -> TaggedValue {
        let evidence: Vec<&[ObservedWrite]> = relays.iter().map(Vec::as_slice).collect();
        decide(&evidence, n, x)
    }

    #[test]
    fn unanimous_first_before_second_serves_the_second_value() {
        for n in [3usize, 5, 7] {
            let relays = vec![first_then_second(); n - 1];
            let served = serve(&relays, n, default_threshold(n));
            assert_eq!(served.value, write(2).value);
            assert_eq!(served.tag, Tag::new(2, w(2)));
        }
    }

    #[test]
    fn unanimous_second_before_first_serves_the_first_value() {
        for n in [3usize, 5, 7] {
            let relays = vec![second_then_first(); n - 1];
            let served = serve(&relays, n, default_threshold(n));
            assert_eq!(served.value, write(1).value);
            assert_eq!(served.tag, Tag::new(2, w(1)));
        }
    }

    #[test]
    fn threshold_boundary_with_and_without_the_extra_relay() {
        for n in [3usize, 5, 7] {
            let x = default_threshold(n);
            // x-1 first-before-second and |S|-x the other way; one relay absent
            let mut relays = vec![first_then_second(); x - 1];
            relays.extend(vec![second_then_first(); n - x]);
            assert_eq!(serve(&relays, n, x).value, write(2).value, "n={n}");
            // the missing relay says second-before-first: |S|-x+1 against
            relays.push(second_then_first());
            assert_eq!(serve(&relays, n, x).value, write(1).value, "n={n}");
        }
    }

    #[test]
    fn full_membership_matches_the_x_relay_rule() {
        let n = 5;
        let x = 3;
        let mut relays = vec![first_then_second(); x];
        relays.extend(vec![second_then_first(); n - x]);
        assert_eq!(
            order_writes(write(1).op, write(2).op, &relays.iter().map(Vec::as_slice).collect::<Vec<_>>(), n, x),
            Precedence::FirstBeforeSecond
        );
        let mut relays = vec![first_then_second(); x - 1];
        relays.extend(vec![second_then_first(); n - x + 1]);
        assert_eq!(
            order_writes(write(1).op, write(2).op, &relays.iter().map(Vec::as_slice).collect::<Vec<_>>(), n, x),
            Precedence::SecondBeforeFirst
        );
    }

    #[test]
    fn no_writes_serves_bottom() {
        assert_eq!(serve(&[vec![], vec![]], 3, 2), TaggedValue::initial());
    }

    #[test]
    fn server_acks_write_after_majority_of_relays() {
        let servers: Vec<_> = (1..=3).map(ProcessId::server).collect();
        let mut s = Server::new(ProcessId::server(1), servers.clone(), 2);
        let mut wr = Writer::new(w(1), servers);
        let inv = wr.invoke(Value::data("a", w(1), 1)).unwrap();
        let relays = s.on_write_request(&inv.messages[0]);
        assert_eq!(relays.len(), 3);
        assert!(relays.iter().all(|m| m.kind == MessageKind::WriteRelay && m.observed.as_ref().unwrap().len() == 1));
        assert!(s.on_write_request(&inv.messages[0]).is_empty());
        assert!(s.on_write_relay(&relays[0]).is_empty());
        let mut from_s2 = relays[0].clone();
        from_s2.relay_origin = Some(ProcessId::server(2));
        let ack = s.on_write_relay(&from_s2);
        assert_eq!(ack.len(), 1);
        assert_eq!(ack[0].tag, Some(Tag::new(1, w(1))));
        assert!(s.on_write_relay(&from_s2).is_empty());
    }
}
