//! Server daemon: one event loop applies frames to the state machine, one
//! thread per inbound connection reads frames, one thread per peer writes
//! relays with reconnect-and-retry.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::BufReader;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use ohram_core::{Message, MessageKind, OpId, ProcessId, ProtocolOptions, ServerNode};

use crate::frame::{read_frame, write_frame};
use crate::{Membership, NetError};

const POLL: Duration = Duration::from_millis(50);
const BACKOFF_START: Duration = Duration::from_millis(5);
const BACKOFF_MAX: Duration = Duration::from_millis(200);

/// Bind override for daemons.
pub const LISTEN_ENV: &str = "OHRAM_LISTEN";

type Conn = Arc<Mutex<TcpStream>>;

struct Inbound {
    msg: Message,
    conn: Conn,
}

/// Identity of a delivery for duplicate suppression.
type DeliveryKey = (ProcessId, OpId, MessageKind, Option<ProcessId>);

fn key(msg: &Message) -> DeliveryKey {
    (msg.sender, msg.op, msg.kind, msg.relay_origin)
}

/// A running daemon. Dropping the handle does not stop it; call
/// [`ServerHandle::kill`].
pub struct ServerHandle {
    id: ProcessId,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn id(&self) -> ProcessId {
        self.id
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Crash the daemon: it stops processing and drops every connection.
    pub fn kill(mut self) {
        self.stop_threads();
    }

    /// Block until the daemon stops.
    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        for s in self.streams.lock().expect("stream registry").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Bind address of server `index` (1-based): `OHRAM_LISTEN` if set,
/// otherwise the membership entry.
pub fn listen_addr(membership: &Membership, index: u32) -> Result<SocketAddr, NetError> {
    if let Ok(addr) = std::env::var(LISTEN_ENV) {
        return addr
            .parse()
            .map_err(|e| NetError::Membership(format!("{LISTEN_ENV}={addr}: {e}")));
    }
    membership
        .address(ProcessId::server(index))
        .ok_or_else(|| NetError::Membership(format!("no server s{index} in membership")))
}

/// Start server `index` (1-based) of `membership`.
pub fn serve(membership: &Membership, index: u32, options: ProtocolOptions) -> Result<ServerHandle, NetError> {
    let addr = listen_addr(membership, index)?;
    let listener = TcpListener::bind(addr).map_err(|source| NetError::Bind { addr, source })?;
    serve_on(membership, index, listener, options)
}

/// Start server `index` on an already bound listener.
pub fn serve_on(
    membership: &Membership,
    index: u32,
    listener: TcpListener,
    options: ProtocolOptions,
) -> Result<ServerHandle, NetError> {
    membership.validate()?;
    let id = ProcessId::server(index);
    if membership.address(id).is_none() {
        return Err(NetError::Membership(format!("no server {id} in membership")));
    }
    let addr = listener.local_addr()?;
    let config = membership.config();
    let node = membership.protocol.build_server(id, &config, &options);
    let stop = Arc::new(AtomicBool::new(false));
    let streams: Arc<Mutex<Vec<TcpStream>>> = Arc::new(Mutex::new(Vec::new()));
    let (tx, rx) = mpsc::channel::<Inbound>();
    let mut threads = Vec::new();

    let mut peers = BTreeMap::new();
    for peer in membership.server_ids() {
        if peer == id {
            continue;
        }
        let (ptx, prx) = mpsc::channel::<Message>();
        let peer_addr = membership.address(peer).expect("peer listed");
        let stop = stop.clone();
        let streams = streams.clone();
        threads.push(thread::spawn(move || peer_link(peer_addr, prx, stop, streams)));
        peers.insert(peer, ptx);
    }

    {
        let stop = stop.clone();
        threads.push(thread::spawn(move || {
            EventLoop {
                id,
                node,
                peers,
                clients: BTreeMap::new(),
                seen: BTreeSet::new(),
                replies: BTreeMap::new(),
            }
            .run(rx, stop)
        }));
    }
    {
        let stop = stop.clone();
        let streams = streams.clone();
        threads.push(thread::spawn(move || accept_loop(listener, tx, stop, streams)));
    }
    log::info!("{id} listening on {addr}");
    Ok(ServerHandle {
        id,
        addr,
        stop,
        streams,
        threads,
    })
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, stop: Arc<AtomicBool>, streams: Arc<Mutex<Vec<TcpStream>>>) {
    let mut readers = Vec::new();
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        let (Ok(read_half), Ok(registry_half)) = (stream.try_clone(), stream.try_clone()) else {
            continue;
        };
        streams.lock().expect("stream registry").push(registry_half);
        let conn: Conn = Arc::new(Mutex::new(stream));
        let tx = tx.clone();
        let stop = stop.clone();
        readers.push(thread::spawn(move || {
            let mut reader = BufReader::new(read_half);
            while !stop.load(Ordering::SeqCst) {
                match read_frame(&mut reader) {
                    Ok(Some(msg)) => {
                        if tx.send(Inbound { msg, conn: conn.clone() }).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        log::debug!("dropping connection: {e}");
                        break;
                    }
                }
            }
        }));
    }
    for r in readers {
        let _ = r.join();
    }
}

/// Deliver frames to one peer in order, reconnecting with exponential
/// backoff. A frame whose write fails is resent on the next connection;
/// the receiver discards duplicates.
fn peer_link(addr: SocketAddr, rx: Receiver<Message>, stop: Arc<AtomicBool>, streams: Arc<Mutex<Vec<TcpStream>>>) {
    let mut conn: Option<TcpStream> = None;
    let mut backoff = BACKOFF_START;
    while !stop.load(Ordering::SeqCst) {
        let msg = match rx.recv_timeout(POLL) {
            Ok(m) => m,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        while !stop.load(Ordering::SeqCst) {
            if conn.is_none() {
                match TcpStream::connect_timeout(&addr, BACKOFF_MAX) {
                    Ok(s) => {
                        let _ = s.set_nodelay(true);
                        if let Ok(c) = s.try_clone() {
                            streams.lock().expect("stream registry").push(c);
                        }
                        conn = Some(s);
                        backoff = BACKOFF_START;
                    }
                    Err(_) => {
                        thread::sleep(backoff);
                        backoff = (backoff * 2).min(BACKOFF_MAX);
                        continue;
                    }
                }
            }
            let stream = conn.as_mut().expect("connected");
            if write_frame(stream, &msg).is_ok() {
                break;
            }
            conn = None;
        }
    }
}

struct EventLoop {
    id: ProcessId,
    node: Box<dyn ServerNode>,
    peers: BTreeMap<ProcessId, Sender<Message>>,
    clients: BTreeMap<ProcessId, Conn>,
    seen: BTreeSet<DeliveryKey>,
    /// Client-bound messages already produced, per operation, for
    /// re-sending when a client retries.
    replies: BTreeMap<OpId, Vec<Message>>,
}

impl EventLoop {
    fn run(mut self, rx: Receiver<Inbound>, stop: Arc<AtomicBool>) {
        while !stop.load(Ordering::SeqCst) {
            match rx.recv_timeout(POLL) {
                Ok(inbound) => self.handle(inbound),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
    }

    fn handle(&mut self, Inbound { msg, conn }: Inbound) {
        if msg.destination != self.id {
            return;
        }
        let from_client = !msg.sender.is_server();
        if from_client {
            self.clients.insert(msg.sender, conn);
        }
        if !self.seen.insert(key(&msg)) {
            if from_client {
                let cached = self.replies.get(&msg.op).cloned().unwrap_or_default();
                for reply in cached {
                    self.reply_to_client(&reply);
                }
            }
            return;
        }
        let mut queue = VecDeque::from([msg]);
        while let Some(m) = queue.pop_front() {
            for out in self.node.on_message(&m) {
                if out.destination == self.id {
                    if self.seen.insert(key(&out)) {
                        queue.push_back(out);
                    }
                } else if out.destination.is_server() {
                    if let Some(peer) = self.peers.get(&out.destination) {
                        let _ = peer.send(out);
                    }
                } else {
                    self.replies.entry(out.op).or_default().push(out.clone());
                    self.reply_to_client(&out);
                }
            }
        }
    }

    fn reply_to_client(&mut self, msg: &Message) {
        let Some(conn) = self.clients.get(&msg.destination) else {
            return;
        };
        let failed = {
            let mut stream = conn.lock().expect("client connection");
            write_frame(&mut *stream, msg).is_err()
        };
        if failed {
            self.clients.remove(&msg.destination);
        }
    }
}
