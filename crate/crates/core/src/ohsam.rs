//! Oh-SAM: single-writer atomic register with two-exchange writes and
//! three-exchange reads.

use std::collections::BTreeSet;

use crate::node::{ClientNode, ClientStep, Completion, Invocation, Invoked, ProtocolError, ServerNode};
use crate::relay_read::{ReadPhase, Register, RelayGc, RelayReadState, RelayReader};
use crate::types::{broadcast, quorum_size, Message, MessageKind, OpId, ProcessId, Tag, TaggedValue, Value};

/// The sole writer.
#[derive(Clone, Debug)]
pub struct Writer {
    id: ProcessId,
    servers: Vec<ProcessId>,
    ts: u64,
    write_op: u64,
    acks: BTreeSet<ProcessId>,
    pending: Option<Value>,
}

impl Writer {
    pub fn new(id: ProcessId, servers: Vec<ProcessId>) -> Self {
        Writer {
            id,
            servers,
            ts: 0,
            write_op: 0,
            acks: BTreeSet::new(),
            pending: None,
        }
    }

    pub fn ts(&self) -> u64 {
        self.ts
    }

    pub fn write_op(&self) -> u64 {
        self.write_op
    }

    pub fn acks(&self) -> &BTreeSet<ProcessId> {
        &self.acks
    }

    fn current(&self) -> TaggedValue {
        TaggedValue::new(
            Tag::new(self.ts, self.id),
            self.pending.clone().unwrap_or(Value::Bottom),
        )
    }

    pub fn invoke(&mut self, value: Value) -> Result<Invoked, ProtocolError> {
        if self.pending.is_some() {
            return Err(ProtocolError::NotWellFormed { process: self.id });
        }
        self.ts += 1;
        self.write_op += 1;
        self.acks.clear();
        self.pending = Some(value);
        let op = OpId::new(self.id, self.write_op);
        let payload = self.current();
        let messages = broadcast(&self.servers, |s| {
            Message::with_payload(MessageKind::WriteRequest, op, &payload, self.id, s)
        });
        Ok(Invoked { op, messages })
    }

    pub fn on_write_ack(&mut self, msg: &Message) -> ClientStep {
        if msg.kind != MessageKind::WriteAck || self.pending.is_none() || msg.op.seq != self.write_op {
            return ClientStep::idle();
        }
        self.acks.insert(msg.sender);
        if self.acks.len() < quorum_size(self.servers.len()) {
            return ClientStep::idle();
        }
        let result = self.current();
        self.pending = None;
        ClientStep::complete(Completion {
            op: OpId::new(self.id, self.write_op),
            result,
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

/// A reader; the relay read needs no protocol-specific state.
#[derive(Clone, Debug)]
pub struct Reader(pub RelayReader);

impl Reader {
    pub fn new(id: ProcessId, servers: Vec<ProcessId>) -> Self {
        Reader(RelayReader::new(id, servers))
    }
}

impl ClientNode for Reader {
    fn id(&self) -> ProcessId {
        self.0.id()
    }

    fn invoke(&mut self, invocation: Invocation) -> Result<Invoked, ProtocolError> {
        match invocation {
            Invocation::Read => self.0.invoke(),
            Invocation::Write { .. } => Err(ProtocolError::UnsupportedOperation {
                process: self.0.id(),
                op: "write",
            }),
        }
    }

    fn on_message(&mut self, msg: &Message) -> ClientStep {
        self.0.on_read_ack(msg)
    }

    fn is_idle(&self) -> bool {
        self.0.phase() == ReadPhase::Idle
    }
}

#[derive(Clone, Debug)]
pub struct Server {
    id: ProcessId,
    servers: Vec<ProcessId>,
    register: Register,
    reads: RelayReadState,
    last_write_op_acked: u64,
}

impl Server {
    pub fn new(id: ProcessId, servers: Vec<ProcessId>, gc: RelayGc) -> Self {
        Server {
            id,
            servers,
            register: Register::default(),
            reads: RelayReadState::new(gc),
            last_write_op_acked: 0,
        }
    }

    pub fn register(&self) -> &Register {
        &self.register
    }

    pub fn reads(&self) -> &RelayReadState {
        &self.reads
    }

    pub fn last_write_op_acked(&self) -> u64 {
        self.last_write_op_acked
    }

    pub fn on_read_request(&mut self, msg: &Message) -> Vec<Message> {
        self.reads.on_read_request(self.id, &self.servers, &self.register, msg)
    }

    pub fn on_read_relay(&mut self, msg: &Message) -> Vec<Message> {
        self.reads
            .on_read_relay(self.id, self.servers.len(), &mut self.register, msg)
    }

    pub fn on_write_request(&mut self, msg: &Message) -> Vec<Message> {
        if let Some(payload) = msg.payload() {
            self.register.adopt_if_newer(&payload);
        }
        self.last_write_op_acked = self.last_write_op_acked.max(msg.op.seq);
        vec![Message::with_payload(
            MessageKind::WriteAck,
            msg.op,
            self.register.get(),
            self.id,
            msg.sender,
        )]
    }
}

impl ServerNode for Server {
    fn id(&self) -> ProcessId {
        self.id
    }

    fn on_message(&mut self, msg: &Message) -> Vec<Message> {
        match msg.kind {
            MessageKind::ReadRequest => self.on_read_request(msg),
            MessageKind::ReadRelay => self.on_read_relay(msg),
            MessageKind::WriteRequest => self.on_write_request(msg),
            _ => Vec::new(),
        }
    }

    fn tag(&self) -> Tag {
        self.register.tag()
    }
}
