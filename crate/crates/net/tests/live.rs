use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use ohram_core::{check_bruteforce, check_witness, History, Message, MessageKind, OpId, ProcessId, Protocol, ProtocolOptions, Tag, TaggedValue, Value};
use ohram_net::frame::{read_frame, write_frame};
use ohram_net::{serve_on, Client, ClientOptions, Clock, Membership, NetError, ServerHandle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cluster(protocol: Protocol, n: usize) -> (Membership, Vec<ServerHandle>) {
    let listeners: Vec<TcpListener> = (0..n).map(|_| TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    let addrs = listeners.iter().map(|l| l.local_addr().unwrap()).collect();
    let membership = Membership::new(protocol, addrs).unwrap();
    let handles = listeners
        .into_iter()
        .enumerate()
        .map(|(i, l)| serve_on(&membership, i as u32 + 1, l, ProtocolOptions::default()).unwrap())
        .collect();
    (membership, handles)
}

fn shutdown(handles: Vec<ServerHandle>) {
    for h in handles {
        h.kill();
    }
}

fn data(tv: &TaggedValue) -> Vec<u8> {
    match &tv.value {
        Value::Data { bytes, .. } => bytes.clone(),
        Value::Bottom => Vec::new(),
    }
}

#[test]
fn sequential_write_then_read() {
    for protocol in Protocol::CORRECT {
        let (m, servers) = cluster(protocol, 3);
        let clock = Clock::shared();
        let mut w = Client::new(&m, ProcessId::writer(1), clock.clone(), ClientOptions::default()).unwrap();
        let mut r = Client::new(&m, ProcessId::reader(1), clock, ClientOptions::default()).unwrap();
        assert!(r.read().unwrap().value.is_bottom());
        let written = w.write("hello").unwrap();
        let read = r.read().unwrap();
        assert_eq!(read, written, "{protocol}");
        assert_eq!(data(&read), b"hello");
        shutdown(servers);
    }
}

#[test]
fn killing_one_of_three_keeps_operations_live() {
    let (m, mut servers) = cluster(Protocol::OhMam, 3);
    let clock = Clock::shared();
    let mut w = Client::new(&m, ProcessId::writer(1), clock.clone(), ClientOptions::default()).unwrap();
    let mut r = Client::new(&m, ProcessId::reader(1), clock, ClientOptions::default()).unwrap();
    w.write("a").unwrap();
    servers.remove(1).kill();
    let written = w.write("b").unwrap();
    assert_eq!(r.read().unwrap(), written);
    shutdown(servers);
}

#[test]
fn write_workload_gives_two_events_per_write() {
    let (m, servers) = cluster(Protocol::OhSam, 3);
    let mut w = Client::new(&m, ProcessId::writer(1), Clock::shared(), ClientOptions::default()).unwrap();
    for i in 0..7 {
        w.write(format!("v{i}")).unwrap();
    }
    assert_eq!(w.history().len(), 14);
    assert!(check_witness(w.history()).unwrap().atomic);
    shutdown(servers);
}

#[test]
fn all_servers_down_is_quorum_unreachable() {
    let (m, servers) = cluster(Protocol::OhSam, 3);
    shutdown(servers);
    let options = ClientOptions {
        attempt_timeout: Duration::from_millis(20),
        retries: 3,
    };
    let mut r = Client::new(&m, ProcessId::reader(1), Clock::shared(), options).unwrap();
    assert!(matches!(r.read(), Err(NetError::QuorumUnreachable { resends: 3, .. })));
    // the failed read stays pending in the history
    assert_eq!(r.history().len(), 1);
}

#[test]
fn duplicate_write_request_changes_state_once_and_is_reacked() {
    let (m, servers) = cluster(Protocol::OhMam, 3);
    let w1 = ProcessId::writer(1);
    let s1 = ProcessId::server(1);
    let mut stream = TcpStream::connect(m.address(s1).unwrap()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let op = OpId::new(w1, 2);
    let request = Message::with_payload(
        MessageKind::WriteRequest,
        op,
        &TaggedValue::new(Tag::new(1, w1), Value::data("x", w1, 1)),
        w1,
        s1,
    );
    write_frame(&mut stream, &request).unwrap();
    let first = read_frame(&mut stream).unwrap().unwrap();
    write_frame(&mut stream, &request).unwrap();
    let second = read_frame(&mut stream).unwrap().unwrap();
    assert_eq!(first.kind, MessageKind::WriteAck);
    assert_eq!(first, second);

    // a newer write from another writer is still adopted once
    let w2 = ProcessId::writer(2);
    let newer = Message::with_payload(
        MessageKind::WriteRequest,
        OpId::new(w2, 2),
        &TaggedValue::new(Tag::new(1, w2), Value::data("y", w2, 1)),
        w2,
        s1,
    );
    write_frame(&mut stream, &newer).unwrap();
    let ack = read_frame(&mut stream).unwrap().unwrap();
    assert_eq!(ack.tag, Some(Tag::new(1, w2)));
    stream.flush().unwrap();
    shutdown(servers);
}

#[test]
fn concurrent_clients_with_a_kill_stay_atomic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for run in 0..5 {
        let protocol = if run % 2 == 0 { Protocol::OhSam } else { Protocol::OhMam };
        let (m, mut servers) = cluster(protocol, 3);
        let clock = Clock::shared();
        let victim = rng.gen_range(0..3);
        let delay = Duration::from_millis(rng.gen_range(0..15));
        let writer = {
            let (m, clock) = (m.clone(), clock.clone());
            thread::spawn(move || {
                let mut c = Client::new(&m, ProcessId::writer(1), clock, ClientOptions::default()).unwrap();
                for i in 0..4 {
                    c.write(format!("w{i}")).unwrap();
                }
                c.into_history()
            })
        };
        let reader = {
            let (m, clock) = (m.clone(), clock.clone());
            thread::spawn(move || {
                let mut c = Client::new(&m, ProcessId::reader(1), clock, ClientOptions::default()).unwrap();
                for _ in 0..4 {
                    c.read().unwrap();
                }
                c.into_history()
            })
        };
        thread::sleep(delay);
        servers.remove(victim).kill();
        let history = History::merge([writer.join().unwrap(), reader.join().unwrap()]);
        assert_eq!(history.len(), 16);
        assert!(check_witness(&history).unwrap().atomic, "{}", history.to_jsonl());
        assert!(check_bruteforce(&history).unwrap().atomic);
        shutdown(servers);
    }
}
