//! Oh-MAM: multi-writer atomic register. Writes take four exchanges
//! (`discover`, `discoverAck`, `writeRequest`, `writeAck`); reads are the
//! three-exchange relay read with tags in place of timestamps.

use std::collections::{BTreeMap, BTreeSet};

use crate::node::{ClientNode, ClientStep, Completion, Invocation, Invoked, ProtocolError, ServerNode};
use crate::relay_read::{Register, RelayGc, RelayReadState};
use crate::types::{broadcast, quorum_size, tag_less, Message, MessageKind, OpId, ProcessId, Tag, TaggedValue, Value};

pub use crate::ohsam::Reader;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WritePhase {
    Idle,
    Discovering,
    Writing,
}

#[derive(Clone, Debug)]
pub struct Writer {
    id: ProcessId,
    servers: Vec<ProcessId>,
    tag: Tag,
    value: Value,
    write_op: u64,
    max_ts: u64,
    discovered: BTreeMap<ProcessId, Message>,
    acks: BTreeSet<ProcessId>,
    phase: WritePhase,
    /// Identifier reported for the operation in progress (the discover op).
    current: Option<OpId>,
}

impl Writer {
    pub fn new(id: ProcessId, servers: Vec<ProcessId>) -> Self {
        Writer {
            id,
            servers,
            tag: Tag::new(0, id),
            value: Value::Bottom,
            write_op: 0,
            max_ts: 0,
            discovered: BTreeMap::new(),
            acks: BTreeSet::new(),
            phase: WritePhase::Idle,
            current: None,
        }
    }

    pub fn phase(&self) -> WritePhase {
        self.phase
    }

    pub fn write_op(&self) -> u64 {
        self.write_op
    }

    pub fn tag(&self) -> Tag {
        self.tag
    }

    pub fn max_ts(&self) -> u64 {
        self.max_ts
    }

    pub fn discovered(&self) -> &BTreeMap<ProcessId, Message> {
        &self.discovered
    }

    /// First phase: ask every server for its tag.
    pub fn invoke_discover(&mut self, value: Value) -> Result<Invoked, ProtocolError> {
        if self.phase != WritePhase::Idle {
            return Err(ProtocolError::NotWellFormed { process: self.id });
        }
        self.write_op += 1;
        self.value = value;
        self.discovered.clear();
        self.acks.clear();
        self.phase = WritePhase::Discovering;
        let op = OpId::new(self.id, self.write_op);
        self.current = Some(op);
        let messages = broadcast(&self.servers, |s| Message::bare(MessageKind::Discover, op, self.id, s));
        Ok(Invoked { op, messages })
    }

    /// Collect a majority of discoverAcks, then choose `(maxTS + 1, self)`
    /// and broadcast the writeRequest.
    pub fn on_discover_ack(&mut self, msg: &Message) -> Vec<Message> {
        if msg.kind != MessageKind::DiscoverAck
            || self.phase != WritePhase::Discovering
            || msg.op.seq != self.write_op
        {
            return Vec::new();
        }
        self.discovered.insert(msg.sender, msg.clone());
        if self.discovered.len() < quorum_size(self.servers.len()) {
            return Vec::new();
        }
        // only the timestamp component matters; the new tag gets this writer's id
        self.max_ts = self
            .discovered
            .values()
            .filter_map(|m| m.tag.map(|t| t.ts))
            .max()
            .unwrap_or(0);
        self.tag = Tag::new(self.max_ts + 1, self.id);
        self.write_op += 1;
        self.phase = WritePhase::Writing;
        let op = OpId::new(self.id, self.write_op);
        let payload = TaggedValue::new(self.tag, self.value.clone());
        broadcast(&self.servers, |s| {
            Message::with_payload(MessageKind::WriteRequest, op, &payload, self.id, s)
        })
    }

    pub fn on_write_ack(&mut self, msg: &Message) -> ClientStep {
        if msg.kind != MessageKind::WriteAck || self.phase != WritePhase::Writing || msg.op.seq != self.write_op {
            return ClientStep::idle();
        }
        self.acks.insert(msg.sender);
        if self.acks.len() < quorum_size(self.servers.len()) {
            return ClientStep::idle();
        }
        self.phase = WritePhase::Idle;
        let op = self.current.take().expect("write in progress has an id");
        ClientStep::complete(Completion {
            op,
            result: TaggedValue::new(self.tag, self.value.clone()),
        })
    }
}

impl ClientNode for Writer {
    fn id(&self) -> ProcessId {
        self.id
    }

    fn invoke(&mut self, invocation: Invocation) -> Result<Invoked, ProtocolError> {
        match invocation {
            Invocation::Write { value } => self.invoke_discover(value),
            Invocation::Read => Err(ProtocolError::UnsupportedOperation {
                process: self.id,
                op: "read",
            }),
        }
    }

    fn on_message(&mut self, msg: &Message) -> ClientStep {
        match msg.kind {
            MessageKind::DiscoverAck => ClientStep::send(self.on_discover_ack(msg)),
            MessageKind::WriteAck => self.on_write_ack(msg),
            _ => ClientStep::idle(),
        }
    }

    fn is_idle(&self) -> bool {
        self.phase == WritePhase::Idle
    }
}

#[derive(Clone, Debug)]
pub struct Server {
    id: ProcessId,
    servers: Vec<ProcessId>,
    register: Register,
    write_operations: BTreeMap<ProcessId, u64>,
    reads: RelayReadState,
}

impl Server {
    pub fn new(id: ProcessId, servers: Vec<ProcessId>, gc: RelayGc) -> Self {
        Server {
            id,
            servers,
            register: Register::default(),
            write_operations: BTreeMap::new(),
            reads: RelayReadState::new(gc),
        }
    }

    pub fn register(&self) -> &Register {
        &self.register
    }

    pub fn write_operations(&self) -> &BTreeMap<ProcessId, u64> {
        &self.write_operations
    }

    pub fn reads(&self) -> &RelayReadState {
        &self.reads
    }

    pub fn on_discover(&mut self, msg: &Message) -> Vec<Message> {
        vec![Message::with_payload(
            MessageKind::DiscoverAck,
            msg.op,
            self.register.get(),
            self.id,
            msg.sender,
        )]
    }

    /// Adopt only when the incoming tag is larger AND the request is newer
    /// than the last adopted write of the same writer. Always acknowledge.
    pub fn on_write_request(&mut self, msg: &Message) -> Vec<Message> {
        if let Some(payload) = msg.payload() {
            let last = self.write_operations.get(&msg.op.invoker).copied().unwrap_or(0);
            if tag_less(&self.register.tag(), &payload.tag) && last < msg.op.seq {
                self.register.set(payload);
                self.write_operations.insert(msg.op.invoker, msg.op.seq);
            }
        }
        vec![Message::with_payload(
            MessageKind::WriteAck,
            msg.op,
            self.register.get(),
            self.id,
            msg.sender,
        )]
    }

    pub fn on_read_request(&mut self, msg: &Message) -> Vec<Message> {
        self.reads.on_read_request(self.id, &self.servers, &self.register, msg)
    }

    pub fn on_read_relay(&mut self, msg: &Message) -> Vec<Message> {
        self.reads
            .on_read_relay(self.id, self.servers.len(), &mut self.register, msg)
    }
}

impl ServerNode for Server {
    fn id(&self) -> ProcessId {
        self.id
    }

    fn on_message(&mut self, msg: &Message) -> Vec<Message> {
        match msg.kind {
            MessageKind::Discover => self.on_discover(msg),
            MessageKind::WriteRequest => self.on_write_request(msg),
            MessageKind::ReadRequest => self.on_read_request(msg),
            MessageKind::ReadRelay => self.on_read_relay(msg),
            _ => Vec::new(),
        }
    }

    fn tag(&self) -> Tag {
        self.register.tag()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn servers(n: u32) -> Vec<ProcessId> {
        (1..=n).map(ProcessId::server).collect()
    }

    fn w(i: u32) -> ProcessId {
        ProcessId::writer(i)
    }

    fn discover_ack(from: u32, to: ProcessId, seq: u64, tag: Tag) -> Message {
        Message::with_payload(
            MessageKind::DiscoverAck,
            OpId::new(to, seq),
            &TaggedValue::new(tag, Value::Bottom),
            ProcessId::server(from),
            to,
        )
    }

    fn write_ack(from: u32, to: ProcessId, seq: u64) -> Message {
        Message::with_payload(
            MessageKind::WriteAck,
            OpId::new(to, seq),
            &TaggedValue::initial(),
            ProcessId::server(from),
            to,
        )
    }

    fn write_req(writer: ProcessId, seq: u64, tag: Tag) -> Message {
        Message::with_payload(
            MessageKind::WriteRequest,
            OpId::new(writer, seq),
            &TaggedValue::new(tag, Value::data("v", writer, seq)),
            writer,
            ProcessId::server(1),
        )
    }

    #[test]
    fn discover_broadcast_and_parity() {
        let mut wr = Writer::new(w(1), servers(5));
        let inv = wr.invoke_discover(Value::data("a", w(1), 1)).unwrap();
        assert_eq!(inv.messages.len(), 5);
        assert!(inv.messages.iter().all(|m| m.kind == MessageKind::Discover && m.tag.is_none()));
        assert_eq!(inv.op.seq % 2, 1);
        let mut reqs = Vec::new();
        for s in 1..=3 {
            reqs.extend(wr.on_discover_ack(&discover_ack(s, w(1), 1, Tag::initial())));
        }
        assert_eq!(reqs.len(), 5);
        assert!(reqs.iter().all(|m| m.op.seq % 2 == 0 && m.kind == MessageKind::WriteRequest));
        assert_eq!(wr.invoke_discover(Value::Bottom).unwrap_err(), ProtocolError::NotWellFormed { process: w(1) });
    }

    #[test]
    fn new_tag_is_max_timestamp_plus_one() {
        let mut wr = Writer::new(w(2), servers(5));
        wr.invoke_discover(Value::data("a", w(2), 1)).unwrap();
        wr.on_discover_ack(&discover_ack(1, w(2), 1, Tag::new(4, w(2))));
        wr.on_discover_ack(&discover_ack(2, w(2), 1, Tag::new(7, w(1))));
        let out = wr.on_discover_ack(&discover_ack(3, w(2), 1, Tag::new(7, w(3))));
        assert_eq!(wr.max_ts(), 7);
        assert_eq!(wr.tag(), Tag::new(8, w(2)));
        assert!(out.iter().all(|m| m.tag == Some(Tag::new(8, w(2)))));
    }

    #[test]
    fn initial_tags_give_timestamp_one() {
        let mut wr = Writer::new(w(1), servers(3));
        wr.invoke_discover(Value::data("a", w(1), 1)).unwrap();
        wr.on_discover_ack(&discover_ack(1, w(1), 1, Tag::initial()));
        wr.on_discover_ack(&discover_ack(2, w(1), 1, Tag::initial()));
        assert_eq!(wr.tag(), Tag::new(1, w(1)));
    }

    #[test]
    fn stale_discover_ack_is_ignored() {
        let mut wr = Writer::new(w(1), servers(3));
        wr.invoke_discover(Value::data("a", w(1), 1)).unwrap();
        for s in 1..=2 {
            wr.on_discover_ack(&discover_ack(s, w(1), 1, Tag::initial()));
        }
        for s in 1..=2 {
            wr.on_write_ack(&write_ack(s, w(1), 2));
        }
        wr.invoke_discover(Value::data("b", w(1), 2)).unwrap();
        assert!(wr.on_discover_ack(&discover_ack(3, w(1), 1, Tag::new(50, w(3)))).is_empty());
        assert!(wr.discovered().is_empty());
    }

    #[test]
    fn write_completes_at_quorum_counting_senders_once() {
        let mut wr = Writer::new(w(1), servers(5));
        let op = wr.invoke_discover(Value::data("a", w(1), 1)).unwrap().op;
        for s in 1..=3 {
            wr.on_discover_ack(&discover_ack(s, w(1), 1, Tag::initial()));
        }
        assert!(wr.on_write_ack(&write_ack(1, w(1), 1)).completion.is_none());
        assert!(wr.on_write_ack(&write_ack(1, w(1), 2)).completion.is_none());
        assert!(wr.on_write_ack(&write_ack(1, w(1), 2)).completion.is_none());
        assert!(wr.on_write_ack(&write_ack(2, w(1), 2)).completion.is_none());
        let done = wr.on_write_ack(&write_ack(3, w(1), 2)).completion.unwrap();
        assert_eq!(done.op, op);
        assert_eq!(done.result.tag, Tag::new(1, w(1)));
        assert!(wr.is_idle());
    }

    #[test]
    fn discover_echoes_local_tag_without_update() {
        let mut s = Server::new(ProcessId::server(1), servers(3), RelayGc::default());
        s.on_write_request(&write_req(w(2), 2, Tag::new(3, w(2))));
        let out = s.on_discover(&Message::bare(MessageKind::Discover, OpId::new(w(1), 1), w(1), ProcessId::server(1)));
        assert_eq!(out[0].tag, Some(Tag::new(3, w(2))));
        assert_eq!(out[0].destination, w(1));
        assert_eq!(s.tag(), Tag::new(3, w(2)));
        let other = s.on_discover(&Message::bare(MessageKind::Discover, OpId::new(w(3), 1), w(3), ProcessId::server(1)));
        assert_eq!(other[0].destination, w(3));
    }

    #[test]
    fn write_request_guard_is_a_conjunction() {
        let mut s = Server::new(ProcessId::server(1), servers(3), RelayGc::default());
        s.on_write_request(&write_req(w(1), 2, Tag::new(2, w(1))));
        s.on_write_request(&write_req(w(2), 2, Tag::new(3, w(2))));
        assert_eq!(s.tag(), Tag::new(3, w(2)));

        // larger tag but stale write_op from w2
        let out = s.on_write_request(&write_req(w(2), 2, Tag::new(9, w(2))));
        assert_eq!(s.tag(), Tag::new(3, w(2)));
        assert_eq!(out[0].kind, MessageKind::WriteAck);

        // equal timestamp, smaller writer id
        s.on_write_request(&write_req(w(1), 4, Tag::new(3, w(1))));
        assert_eq!(s.tag(), Tag::new(3, w(2)));
        assert_eq!(s.write_operations()[&w(1)], 2);
    }
}
