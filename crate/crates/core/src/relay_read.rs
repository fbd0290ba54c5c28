//! The three-exchange read shared by Oh-SAM and Oh-MAM:
//! `readRequest` (reader → servers), `readRelay` (server → all servers) and
//! `readAck` (server → reader, once a majority of relays for the read has
//! arrived). The reader returns the minimum-tag reply of a majority.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::node::{ClientStep, Completion, Invoked, ProtocolError};
use crate::types::{broadcast, quorum_size, tag_less, Message, MessageKind, OpId, ProcessId, Tag, TaggedValue};

/// The `(tag, value)` a server currently stores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Register {
    current: TaggedValue,
}

impl Default for Register {
    fn default() -> Self {
        Register {
            current: TaggedValue::initial(),
        }
    }
}

impl Register {
    pub fn tag(&self) -> Tag {
        self.current.tag
    }

    pub fn get(&self) -> &TaggedValue {
        &self.current
    }

    /// Replace the stored pair if `incoming` carries a strictly larger tag.
    /// Returns whether the register changed.
    pub fn adopt_if_newer(&mut self, incoming: &TaggedValue) -> bool {
        if tag_less(&self.current.tag, &incoming.tag) {
            self.current = incoming.clone();
            true
        } else {
            false
        }
    }

    pub(crate) fn set(&mut self, incoming: TaggedValue) {
        self.current = incoming;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadPhase {
    Idle,
    Reading,
}

/// Reader side of the relay read.
#[derive(Clone, Debug)]
pub struct RelayReader {
    id: ProcessId,
    servers: Vec<ProcessId>,
    read_op: u64,
    phase: ReadPhase,
    acks: BTreeMap<ProcessId, TaggedValue>,
}

impl RelayReader {
    pub fn new(id: ProcessId, servers: Vec<ProcessId>) -> Self {
        RelayReader {
            id,
            servers,
            read_op: 0,
            phase: ReadPhase::Idle,
            acks: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn read_op(&self) -> u64 {
        self.read_op
    }

    pub fn phase(&self) -> ReadPhase {
        self.phase
    }

    pub fn acks(&self) -> &BTreeMap<ProcessId, TaggedValue> {
        &self.acks
    }

    pub fn invoke(&mut self) -> Result<Invoked, ProtocolError> {
        if self.phase != ReadPhase::Idle {
            return Err(ProtocolError::NotWellFormed { process: self.id });
        }
        self.read_op += 1;
        self.acks.clear();
        self.phase = ReadPhase::Reading;
        let op = OpId::new(self.id, self.read_op);
        let messages = broadcast(&self.servers, |s| Message::bare(MessageKind::ReadRequest, op, self.id, s));
        Ok(Invoked { op, messages })
    }

    pub fn on_read_ack(&mut self, msg: &Message) -> ClientStep {
        let current = OpId::new(self.id, self.read_op);
        if msg.kind != MessageKind::ReadAck || self.phase != ReadPhase::Reading || msg.op != current {
            return ClientStep::idle();
        }
        let Some(payload) = msg.payload() else {
            return ClientStep::idle();
        };
        self.acks.insert(msg.sender, payload);
        if self.acks.len() < quorum_size(self.servers.len()) {
            return ClientStep::idle();
        }
        // at least one ack is present, so the minimum exists
        let result = self
            .acks
            .values()
            .min_by(|a, b| a.tag.cmp(&b.tag))
            .cloned()
            .expect("quorum of acks is non-empty");
        self.phase = ReadPhase::Idle;
        ClientStep::complete(Completion { op: current, result })
    }
}

/// How long a server keeps the relay set of a read it already answered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayGc {
    /// Drop an answered read's relay set once a later operation of the same
    /// reader has been seen.
    #[default]
    UntilNextOp,
    /// Never drop relay sets.
    Disabled,
}

/// Server-side bookkeeping of the relay read.
#[derive(Clone, Debug, Default)]
pub struct RelayReadState {
    relays: BTreeMap<OpId, BTreeSet<ProcessId>>,
    relayed: BTreeSet<OpId>,
    acked_reads: BTreeSet<OpId>,
    latest_seen: BTreeMap<ProcessId, u64>,
    gc: RelayGc,
}

impl RelayReadState {
    pub fn new(gc: RelayGc) -> Self {
        RelayReadState {
            gc,
            ..Default::default()
        }
    }

    pub fn relays(&self) -> &BTreeMap<OpId, BTreeSet<ProcessId>> {
        &self.relays
    }

    pub fn acked_reads(&self) -> &BTreeSet<OpId> {
        &self.acked_reads
    }

    pub fn has_relayed(&self, op: &OpId) -> bool {
        self.relayed.contains(op)
    }

    /// A read request: broadcast a relay carrying the local pair to every
    /// server, this one included. The local register is not touched.
    pub fn on_read_request(
        &mut self,
        me: ProcessId,
        servers: &[ProcessId],
        register: &Register,
        msg: &Message,
    ) -> Vec<Message> {
        self.observe(msg.op);
        if !self.relayed.insert(msg.op) {
            return Vec::new();
        }
        broadcast(servers, |dest| Message {
            relay_origin: Some(me),
            ..Message::with_payload(MessageKind::ReadRelay, msg.op, register.get(), me, dest)
        })
    }

    /// A relay from `msg.relay_origin`: adopt a newer pair, count the relay
    /// and answer the reader once a majority of relays has arrived.
    pub fn on_read_relay(
        &mut self,
        me: ProcessId,
        n_servers: usize,
        register: &mut Register,
        msg: &Message,
    ) -> Vec<Message> {
        if let Some(payload) = msg.payload() {
            register.adopt_if_newer(&payload);
        }
        self.observe(msg.op);
        if self.acked_reads.contains(&msg.op) {
            return Vec::new();
        }
        let origin = msg.relay_origin.unwrap_or(msg.sender);
        let relays = self.relays.entry(msg.op).or_default();
        relays.insert(origin);
        if relays.len() < quorum_size(n_servers) {
            return Vec::new();
        }
        self.acked_reads.insert(msg.op);
        self.collect(msg.op.invoker);
        vec![Message::with_payload(
            MessageKind::ReadAck,
            msg.op,
            register.get(),
            me,
            msg.op.invoker,
        )]
    }

    fn observe(&mut self, op: OpId) {
        let latest = self.latest_seen.entry(op.invoker).or_insert(0);
        if op.seq > *latest {
            *latest = op.seq;
            self.collect(op.invoker);
        }
    }

    fn collect(&mut self, reader: ProcessId) {
        if self.gc == RelayGc::Disabled {
            return;
        }
        let latest = self.latest_seen.get(&reader).copied().unwrap_or(0);
        let acked = &self.acked_reads;
        self.relays
            .retain(|op, _| !(op.invoker == reader && op.seq < latest && acked.contains(op)));
    }
}
