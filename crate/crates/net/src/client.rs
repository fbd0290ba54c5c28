//! Reader and writer clients over TCP, recording a history of their own
//! operations.

use std::collections::BTreeMap;
use std::io::BufReader;
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use ohram_core::{
    ClientNode, EventKind, History, HistoryEvent, Invocation, Message, OpId, ProcessId, TaggedValue, Value,
};

use crate::frame::{read_frame, write_frame};
use crate::{Membership, NetError};

/// Source of history indices.
#[derive(Clone, Debug)]
pub enum Clock {
    /// A counter shared by every client of one process.
    Shared(Arc<AtomicU64>),
    /// Nanoseconds since the Unix epoch, for clients in separate processes
    /// on the same host.
    System,
}

impl Clock {
    pub fn shared() -> Self {
        Clock::Shared(Arc::new(AtomicU64::new(0)))
    }

    fn now(&self) -> u64 {
        match self {
            Clock::Shared(c) => c.fetch_add(1, Ordering::SeqCst),
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ClientOptions {
    /// How long to wait for progress before resending the current phase.
    pub attempt_timeout: Duration,
    /// Resends allowed per operation before giving up.
    pub retries: u32,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            attempt_timeout: Duration::from_millis(250),
            retries: 20,
        }
    }
}

pub struct Client {
    id: ProcessId,
    node: Box<dyn ClientNode>,
    membership: Membership,
    conns: BTreeMap<ProcessId, TcpStream>,
    tx: Sender<Message>,
    rx: Receiver<Message>,
    clock: Clock,
    last_index: u64,
    writes: u64,
    options: ClientOptions,
    history: History,
}

impl Client {
    pub fn new(membership: &Membership, id: ProcessId, clock: Clock, options: ClientOptions) -> Result<Self, NetError> {
        membership.validate()?;
        if id.is_server() || id.index == 0 {
            return Err(NetError::Membership(format!("{id} is not a client id")));
        }
        let node = membership.protocol.build_client(id, &membership.config());
        let (tx, rx) = mpsc::channel();
        Ok(Client {
            id,
            node,
            membership: membership.clone(),
            conns: BTreeMap::new(),
            tx,
            rx,
            clock,
            last_index: 0,
            writes: 0,
            options,
            history: History::default(),
        })
    }

    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn into_history(mut self) -> History {
        std::mem::take(&mut self.history)
    }

    pub fn read(&mut self) -> Result<TaggedValue, NetError> {
        self.execute(Invocation::Read)
    }

    /// Write `data`; the value is made unique by this client's id and a
    /// per-client counter.
    pub fn write(&mut self, data: impl Into<Vec<u8>>) -> Result<TaggedValue, NetError> {
        self.writes += 1;
        let value = Value::data(data, self.id, self.writes);
        self.execute(Invocation::Write { value })
    }

    fn tick(&mut self) -> u64 {
        let t = self.clock.now().max(self.last_index + 1);
        self.last_index = t;
        t
    }

    fn record(&mut self, kind: EventKind, op: &Invocation, op_id: OpId, result: Option<TaggedValue>) {
        let index = self.tick();
        self.history.push(HistoryEvent {
            index,
            kind,
            process: self.id,
            op: op.clone(),
            result,
            op_id,
        });
    }

    pub fn execute(&mut self, invocation: Invocation) -> Result<TaggedValue, NetError> {
        let invoked = self.node.invoke(invocation.clone())?;
        let op_id = invoked.op;
        self.record(EventKind::Invoke, &invocation, op_id, None);
        let mut outstanding = invoked.messages;
        self.send_all(&outstanding);
        let mut resends = 0;
        loop {
            match self.rx.recv_timeout(self.options.attempt_timeout) {
                Ok(msg) => {
                    let step = self.node.on_message(&msg);
                    if !step.messages.is_empty() {
                        outstanding = step.messages;
                        self.send_all(&outstanding);
                    }
                    if let Some(done) = step.completion {
                        self.record(EventKind::Respond, &invocation, op_id, Some(done.result.clone()));
                        return Ok(done.result);
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    if resends >= self.options.retries {
                        return Err(NetError::QuorumUnreachable { op: op_id, resends });
                    }
                    resends += 1;
                    log::debug!("{op_id}: resending {} messages", outstanding.len());
                    self.send_all(&outstanding);
                }
                Err(RecvTimeoutError::Disconnected) => unreachable!("client holds a sender"),
            }
        }
    }

    fn send_all(&mut self, messages: &[Message]) {
        for m in messages {
            self.send(m);
        }
    }

    fn send(&mut self, msg: &Message) {
        let dest = msg.destination;
        if !self.conns.contains_key(&dest) && self.connect(dest).is_err() {
            return;
        }
        let stream = self.conns.get_mut(&dest).expect("connected");
        if write_frame(stream, msg).is_err() {
            self.conns.remove(&dest);
        }
    }

    fn connect(&mut self, server: ProcessId) -> Result<(), NetError> {
        let addr = self
            .membership
            .address(server)
            .ok_or_else(|| NetError::Membership(format!("no address for {server}")))?;
        let stream = TcpStream::connect_timeout(&addr, self.options.attempt_timeout)?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let tx = self.tx.clone();
        thread::spawn(move || {
            while let Ok(Some(msg)) = read_frame(&mut reader) {
                if tx.send(msg).is_err() {
                    break;
                }
            }
        });
        self.conns.insert(server, stream);
        Ok(())
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        for s in self.conns.values() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}
