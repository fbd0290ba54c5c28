//! ABD baseline. Reads query a majority, pick the maximum tag and write it
//! back before returning (four exchanges). Single-writer writes take one
//! round; multi-writer writes first query the maximum tag.
//!
//! Message kinds reused: `readRequest`/`readAck` for the read query,
//! `writeRequest`/`writeAck` for every propagation round (including a
//! reader's write-back) and `discover`/`discoverAck` for the multi-writer
//! tag query.

use std::collections::{BTreeMap, BTreeSet};

use crate::node::{ClientNode, ClientStep, Completion, Invocation, Invoked, ProtocolError, ServerNode};
use crate::relay_read::Register;
use crate::types::{broadcast, quorum_size, Message, MessageKind, OpId, ProcessId, Tag, TaggedValue, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReaderPhase {
    Idle,
    Query,
    WriteBack,
}

#[derive(Clone, Debug)]
pub struct Reader {
    id: ProcessId,
    servers: Vec<ProcessId>,
    read_op: u64,
    phase: ReaderPhase,
    collected: BTreeMap<ProcessId, TaggedValue>,
    chosen: Option<TaggedValue>,
    acks: BTreeSet<ProcessId>,
}

impl Reader {
    pub fn new(id: ProcessId, servers: Vec<ProcessId>) -> Self {
        Reader {
            id,
            servers,
            read_op: 0,
            phase: ReaderPhase::Idle,
            collected: BTreeMap::new(),
            chosen: None,
            acks: BTreeSet::new(),
        }
    }

    pub fn phase(&self) -> ReaderPhase {
        self.phase
    }

    fn op(&self) -> OpId {
        OpId::new(self.id, self.read_op)
    }

    pub fn invoke(&mut self) -> Result<Invoked, ProtocolError> {
        if self.phase != ReaderPhase::Idle {
            return Err(ProtocolError::NotWellFormed { process: self.id });
        }
        self.read_op += 1;
        self.phase = ReaderPhase::Query;
        self.collected.clear();
        self.acks.clear();
        self.chosen = None;
        let op = self.op();
        let messages = broadcast(&self.servers, |s| Message::bare(MessageKind::ReadRequest, op, self.id, s));
        Ok(Invoked { op, messages })
    }

    pub fn on_message(&mut self, msg: &Message) -> ClientStep {
        if msg.op != self.op() {
            return ClientStep::idle();
        }
        let quorum = quorum_size(self.servers.len());
        match (self.phase, msg.kind) {
            (ReaderPhase::Query, MessageKind::ReadAck) => {
                let Some(payload) = msg.payload() else {
                    return ClientStep::idle();
                };
                self.collected.insert(msg.sender, payload);
                if self.collected.len() < quorum {
                    return ClientStep::idle();
                }
                let max = self
                    .collected
                    .values()
                    .max_by(|a, b| a.tag.cmp(&b.tag))
                    .cloned()
                    .expect("quorum is non-empty");
                self.phase = ReaderPhase::WriteBack;
                let op = self.op();
                let messages = broadcast(&self.servers, |s| {
                    Message::with_payload(MessageKind::WriteRequest, op, &max, self.id, s)
                });
                self.chosen = Some(max);
                ClientStep::send(messages)
            }
            (ReaderPhase::WriteBack, MessageKind::WriteAck) => {
                self.acks.insert(msg.sender);
                if self.acks.len() < quorum {
                    return ClientStep::idle();
                }
                self.phase = ReaderPhase::Idle;
                ClientStep::complete(Completion {
                    op: self.op(),
                    result: self.chosen.take().expect("write-back has a chosen value"),
                })
            }
            _ => ClientStep::idle(),
        }
    }
}

impl ClientNode for Reader {
    fn id(&self) -> ProcessId {
        self.id
    }

    fn invoke(&mut self, invocation: Invocation) -> Result<Invoked, ProtocolError> {
        match invocation {
            Invocation::Read => Reader::invoke(self),
            Invocation::Write { .. } => Err(ProtocolError::UnsupportedOperation {
                process: self.id,
                op: "write",
            }),
        }
    }

    fn on_message(&mut self, msg: &Message) -> ClientStep {
        Reader::on_message(self, msg)
    }

    fn is_idle(&self) -> bool {
        self.phase == ReaderPhase::Idle
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WriterPhase {
    Idle,
    Query,
    Propagate,
}

/// ABD writer. In single-writer mode it skips the query round and uses a
/// local timestamp.
#[derive(Clone, Debug)]
pub struct Writer {
    id: ProcessId,
    servers: Vec<ProcessId>,
    multi_writer: bool,
    ts: u64,
    write_op: u64,
    phase: WriterPhase,
    pending: Option<TaggedValue>,
    queried: BTreeMap<ProcessId, Tag>,
    acks: BTreeSet<ProcessId>,
}

impl Writer {
    pub fn swmr(id: ProcessId, servers: Vec<ProcessId>) -> Self {
        Self::new(id, servers, false)
    }

    pub fn mwmr(id: ProcessId, servers: Vec<ProcessId>) -> Self {
        Self::new(id, servers, true)
    }

    fn new(id: ProcessId, servers: Vec<ProcessId>, multi_writer: bool) -> Self {
        Writer {
            id,
            servers,
            multi_writer,
            ts: 0,
            write_op: 0,
            phase: WriterPhase::Idle,
            pending: None,
            queried: BTreeMap::new(),
            acks: BTreeSet::new(),
        }
    }

    pub fn phase(&self) -> WriterPhase {
        self.phase
    }

    fn op(&self) -> OpId {
        OpId::new(self.id, self.write_op)
    }

    fn propagate(&mut self) -> Vec<Message> {
        self.phase = WriterPhase::Propagate;
        let op = self.op();
        let payload = self.pending.clone().expect("value is pending");
        broadcast(&self.servers, |s| {
            Message::with_payload(MessageKind::WriteRequest, op, &payload, self.id, s)
        })
    }

    pub fn invoke(&mut self, value: Value) -> Result<Invoked, ProtocolError> {
        if self.phase != WriterPhase::Idle {
            return Err(ProtocolError::NotWellFormed { process: self.id });
        }
        self.write_op += 1;
        self.acks.clear();
        self.queried.clear();
        let op = self.op();
        if self.multi_writer {
            self.pending = Some(TaggedValue::new(Tag::initial(), value));
            self.phase = WriterPhase::Query;
            let messages = broadcast(&self.servers, |s| Message::bare(MessageKind::Discover, op, self.id, s));
            Ok(Invoked { op, messages })
        } else {
            self.ts += 1;
            self.pending = Some(TaggedValue::new(Tag::new(self.ts, self.id), value));
            Ok(Invoked {
                op,
                messages: self.propagate(),
            })
        }
    }

    pub fn on_message(&mut self, msg: &Message) -> ClientStep {
        if msg.op != self.op() {
            return ClientStep::idle();
        }
        let quorum = quorum_size(self.servers.len());
        match (self.phase, msg.kind) {
            (WriterPhase::Query, MessageKind::DiscoverAck) => {
                let Some(tag) = msg.tag else {
                    return ClientStep::idle();
                };
                self.queried.insert(msg.sender, tag);
                if self.queried.len() < quorum {
                    return ClientStep::idle();
                }
                let max_ts = self.queried.values().map(|t| t.ts).max().unwrap_or(0);
                if let Some(p) = self.pending.as_mut() {
                    p.tag = Tag::new(max_ts + 1, self.id);
                }
                ClientStep::send(self.propagate())
            }
            (WriterPhase::Propagate, MessageKind::WriteAck) => {
                self.acks.insert(msg.sender);
                if self.acks.len() < quorum {
                    return ClientStep::idle();
                }
                self.phase = WriterPhase::Idle;
                ClientStep::complete(Completion {
                    op: self.op(),
                    result: self.pending.take().expect("value is pending"),
                })
            }
            _ => ClientStep::idle(),
        }
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
        Writer::on_message(self, msg)
    }

    fn is_idle(&self) -> bool {
        self.phase == WriterPhase::Idle
    }
}

#[derive(Clone, Debug)]
pub struct Server {
    id: ProcessId,
    register: Register,
}

impl Server {
    pub fn new(id: ProcessId) -> Self {
        Server {
            id,
            register: Register::default(),
        }
    }

    pub fn register(&self) -> &Register {
        &self.register
    }
}

impl ServerNode for Server {
    fn id(&self) -> ProcessId {
        self.id
    }

    fn on_message(&mut self, msg: &Message) -> Vec<Message> {
        let reply = match msg.kind {
            MessageKind::ReadRequest => MessageKind::ReadAck,
            MessageKind::Discover => MessageKind::DiscoverAck,
            MessageKind::WriteRequest => {
                if let Some(payload) = msg.payload() {
                    self.register.adopt_if_newer(&payload);
                }
                MessageKind::WriteAck
            }
            _ => return Vec::new(),
        };
        vec![Message::with_payload(reply, msg.op, self.register.get(), self.id, msg.sender)]
    }

    fn tag(&self) -> Tag {
        self.register.tag()
    }
}
