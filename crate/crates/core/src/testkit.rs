//! Helpers shared by tests, benches and the command line: hand-built
//! histories, known-bad fixtures, random scenarios and history mutations.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checker::Property;
use crate::history::{EventKind, History, HistoryEvent};
use crate::node::Invocation;
use crate::protocol::Protocol;
use crate::schedule::Schedule;
use crate::types::{Config, OpId, ProcessId, Tag, TaggedValue, Value};
use crate::workload::Workload;

/// What a hand-built read returns.
#[derive(Clone, Debug)]
pub enum Returns {
    Bottom,
    /// The value and tag of an earlier `write` call.
    Write(OpId),
    /// A value nobody wrote.
    Unwritten(&'static str),
}

/// Builds histories from operations with explicit invocation and response
/// indices. Write tags are `(k, writer)` where `k` counts `write` calls.
#[derive(Debug, Default)]
pub struct HistoryBuilder {
    events: Vec<HistoryEvent>,
    seqs: BTreeMap<ProcessId, u64>,
    writes: BTreeMap<OpId, TaggedValue>,
}

impl HistoryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn next_op(&mut self, process: ProcessId) -> OpId {
        let seq = self.seqs.entry(process).or_insert(0);
        *seq += 1;
        OpId::new(process, *seq)
    }

    fn push(&mut self, index: u64, kind: EventKind, process: ProcessId, op: Invocation, op_id: OpId, result: Option<TaggedValue>) {
        self.events.push(HistoryEvent {
            index,
            kind,
            process,
            op,
            result,
            op_id,
        });
    }

    /// A write of `data` invoked at `inv`; `resp` of `None` leaves it pending.
    pub fn write(&mut self, writer: ProcessId, data: &str, inv: u64, resp: Option<u64>) -> OpId {
        let op_id = self.next_op(writer);
        let tag = Tag::new(self.writes.len() as u64 + 1, writer);
        let value = Value::data(data, writer, op_id.seq);
        let written = TaggedValue::new(tag, value.clone());
        self.writes.insert(op_id, written.clone());
        let invocation = Invocation::Write { value };
        self.push(inv, EventKind::Invoke, writer, invocation.clone(), op_id, None);
        if let Some(r) = resp {
            self.push(r, EventKind::Respond, writer, invocation, op_id, Some(written));
        }
        op_id
    }

    pub fn read(&mut self, reader: ProcessId, inv: u64, resp: u64, returns: Returns) -> OpId {
        let op_id = self.next_op(reader);
        let result = match returns {
            Returns::Bottom => TaggedValue::initial(),
            Returns::Write(w) => self.writes[&w].clone(),
            Returns::Unwritten(data) => TaggedValue::new(Tag::new(99, ProcessId::writer(99)), Value::data(data, ProcessId::writer(99), 1)),
        };
        self.push(inv, EventKind::Invoke, reader, Invocation::Read, op_id, None);
        self.push(resp, EventKind::Respond, reader, Invocation::Read, op_id, Some(result));
        op_id
    }

    pub fn build(mut self) -> History {
        self.events.sort_by_key(|e| e.index);
        History::new(self.events)
    }
}

/// A history that no atomic register can produce.
#[derive(Debug)]
pub struct Fixture {
    pub name: &'static str,
    /// The property the history breaks.
    pub breaks: Property,
    pub history: History,
}

const W1: ProcessId = ProcessId::writer(1);
const W2: ProcessId = ProcessId::writer(2);
const W3: ProcessId = ProcessId::writer(3);
const R1: ProcessId = ProcessId::reader(1);
const R2: ProcessId = ProcessId::reader(2);

fn fixture(name: &'static str, breaks: Property, f: impl FnOnce(&mut HistoryBuilder)) -> Fixture {
    let mut b = HistoryBuilder::new();
    f(&mut b);
    Fixture {
        name,
        breaks,
        history: b.build(),
    }
}

/// Twelve hand-written violations of real-time order (P1), write order
/// (P2) and read freshness (P3).
pub fn violation_fixtures() -> Vec<Fixture> {
    vec![
        fixture("read_from_the_future", Property::P1, |b| {
            let w = b.write(W1, "a", 2, Some(3));
            b.read(R1, 0, 1, Returns::Write(w));
        }),
        fixture("read_ignores_completed_write", Property::P3, |b| {
            let a = b.write(W1, "a", 0, Some(1));
            b.write(W1, "b", 2, Some(3));
            b.read(R1, 4, 5, Returns::Write(a));
        }),
        fixture("third_write_overlooked", Property::P3, |b| {
            b.write(W1, "a", 0, Some(1));
            let bb = b.write(W1, "b", 2, Some(3));
            b.write(W1, "c", 4, Some(5));
            b.read(R1, 6, 7, Returns::Write(bb));
        }),
        fixture("same_reader_goes_back", Property::P1, |b| {
            let a = b.write(W1, "a", 0, Some(1));
            let bb = b.write(W1, "b", 2, None);
            b.read(R1, 3, 4, Returns::Write(bb));
            b.read(R1, 5, 6, Returns::Write(a));
        }),
        fixture("other_reader_goes_back", Property::P1, |b| {
            let a = b.write(W1, "a", 0, Some(1));
            let bb = b.write(W1, "b", 2, None);
            b.read(R1, 3, 4, Returns::Write(bb));
            b.read(R2, 5, 6, Returns::Write(a));
        }),
        fixture("concurrent_writes_seen_in_both_orders", Property::P2, |b| {
            let a = b.write(W1, "a", 0, Some(10));
            let bb = b.write(W2, "b", 1, Some(10));
            b.read(R1, 11, 12, Returns::Write(a));
            b.read(R1, 13, 14, Returns::Write(bb));
        }),
        fixture("concurrent_writes_seen_in_both_orders_by_two_readers", Property::P2, |b| {
            let a = b.write(W1, "a", 0, Some(10));
            let bb = b.write(W2, "b", 1, Some(10));
            b.read(R1, 11, 12, Returns::Write(bb));
            b.read(R2, 13, 14, Returns::Write(a));
        }),
        fixture("readers_force_opposite_write_orders", Property::P2, |b| {
            let a = b.write(W1, "a", 0, None);
            let bb = b.write(W2, "b", 0, None);
            b.read(R1, 1, 2, Returns::Write(a));
            b.read(R1, 3, 4, Returns::Write(bb));
            b.read(R2, 1, 2, Returns::Write(bb));
            b.read(R2, 3, 4, Returns::Write(a));
        }),
        fixture("overwritten_value_after_three_writers", Property::P3, |b| {
            let a = b.write(W1, "a", 0, Some(1));
            b.write(W2, "b", 2, Some(3));
            let c = b.write(W3, "c", 0, Some(5));
            b.read(R1, 6, 7, Returns::Write(c));
            b.read(R1, 8, 9, Returns::Write(a));
        }),
        fixture("value_never_written", Property::P3, |b| {
            b.write(W1, "a", 0, Some(1));
            b.read(R1, 2, 3, Returns::Unwritten("z"));
        }),
        fixture("initial_value_after_completed_write", Property::P3, |b| {
            b.write(W1, "a", 0, Some(1));
            b.read(R1, 2, 3, Returns::Bottom);
        }),
        fixture("initial_value_after_read_of_a_write", Property::P3, |b| {
            let a = b.write(W1, "a", 0, None);
            b.read(R1, 1, 2, Returns::Write(a));
            b.read(R2, 3, 4, Returns::Bottom);
        }),
    ]
}

/// A random run description for the adversity suites.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub protocol: Protocol,
    pub config: Config,
    pub workload: Workload,
    pub schedule: Schedule,
}

impl Scenario {
    /// `|S|` from {3, 5, 7}, the maximal fault bound, up to that many crashes
    /// at random steps, up to five readers and (multi-writer) five writers,
    /// at most `max_ops` operations.
    pub fn random(rng: &mut impl Rng, protocol: Protocol, max_ops: usize) -> Self {
        let n_servers = *[3usize, 5, 7].choose(rng).expect("non-empty");
        let f = (n_servers - 1) / 2;
        let n_readers = rng.gen_range(1..=5);
        let n_writers = match protocol.mode() {
            crate::types::Mode::Swmr => 1,
            crate::types::Mode::Mwmr => rng.gen_range(1..=5),
        };
        let config = Config::new(n_servers, n_readers, n_writers, f);
        let workload = Workload::random(rng, &config, protocol.mode(), max_ops);
        let mut schedule = Schedule::seeded(rng.gen());
        let mut servers = config.servers();
        servers.shuffle(rng);
        let crashes = rng.gen_range(0..=f);
        for s in servers.into_iter().take(crashes) {
            let at = rng.gen_range(0..400);
            schedule = schedule.with_crash(s, at);
        }
        Scenario {
            protocol,
            config,
            workload,
            schedule,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// A read returns a value nobody wrote.
    Unwritten,
    /// A read returns ⊥ with the initial tag.
    Initial,
    /// A read returns the value and tag of a different write.
    OtherWrite,
    /// Two reads exchange their results.
    SwapReads,
}

impl Mutation {
    pub const ALL: [Mutation; 4] = [
        Mutation::Unwritten,
        Mutation::Initial,
        Mutation::OtherWrite,
        Mutation::SwapReads,
    ];
}

/// Corrupt one or two read responses of `history`, keeping tags and values
/// coherent with the writes. Returns `None` when the history has no read
/// the mutation applies to.
pub fn mutate(history: &History, mutation: Mutation, rng: &mut impl Rng) -> Option<History> {
    let reads: Vec<usize> = history
        .events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == EventKind::Respond && e.op.is_read())
        .map(|(i, _)| i)
        .collect();
    let &target = reads.choose(rng)?;
    let mut out = history.clone();
    let current = out.events[target].result.clone();
    let replacement = match mutation {
        Mutation::Unwritten => {
            let ghost = ProcessId::writer(u32::MAX);
            TaggedValue::new(Tag::new(u64::MAX, ghost), Value::data("unwritten", ghost, 0))
        }
        Mutation::Initial => TaggedValue::initial(),
        Mutation::OtherWrite => {
            let known = known_writes(history);
            let choices: Vec<&TaggedValue> = known.iter().filter(|tv| Some(*tv) != current.as_ref()).collect();
            (*choices.choose(rng)?).clone()
        }
        Mutation::SwapReads => {
            let others: Vec<usize> = reads
                .iter()
                .copied()
                .filter(|&i| i != target && out.events[i].result != current)
                .collect();
            let &other = others.choose(rng)?;
            let theirs = out.events[other].result.clone();
            out.events[other].result = current.clone();
            theirs?
        }
    };
    if Some(&replacement) == current.as_ref() {
        return None;
    }
    out.events[target].result = Some(replacement);
    Some(out)
}

/// The `(tag, value)` pair of every write whose tag is known from its
/// response or from a read that returned it.
fn known_writes(history: &History) -> Vec<TaggedValue> {
    let mut by_value: BTreeMap<Value, Tag> = BTreeMap::new();
    for e in &history.events {
        if let Some(r) = &e.result {
            if !r.value.is_bottom() {
                by_value.insert(r.value.clone(), r.tag);
            }
        }
    }
    history
        .events
        .iter()
        .filter(|e| e.kind == EventKind::Invoke)
        .filter_map(|e| match &e.op {
            Invocation::Write { value } => by_value.get(value).map(|t| TaggedValue::new(*t, value.clone())),
            Invocation::Read => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::{check_bruteforce, check_witness};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixtures_are_well_formed_and_rejected() {
        let fixtures = violation_fixtures();
        assert_eq!(fixtures.len(), 12);
        for f in &fixtures {
            f.history.operations().unwrap_or_else(|e| panic!("{}: {e}", f.name));
            let w = check_witness(&f.history).unwrap();
            let b = check_bruteforce(&f.history).unwrap();
            assert!(!w.atomic, "{} passed the witness check", f.name);
            assert!(!b.atomic, "{} passed the exhaustive check", f.name);
        }
    }

    #[test]
    fn mutations_change_one_read() {
        let mut b = HistoryBuilder::new();
        let a = b.write(W1, "a", 0, Some(1));
        let bb = b.write(W1, "b", 2, Some(3));
        b.read(R1, 4, 5, Returns::Write(bb));
        b.read(R2, 6, 7, Returns::Write(a));
        let h = b.build();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in Mutation::ALL {
            let out = mutate(&h, m, &mut rng).unwrap();
            assert_ne!(out, h);
            assert_eq!(out.operations().unwrap().len(), 4);
        }
    }

    #[test]
    fn scenarios_respect_fault_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let s = Scenario::random(&mut rng, Protocol::OhSam, 10);
            assert!(s.schedule.crashed_servers().len() <= s.config.f);
            assert_eq!(s.config.n_writers, 1);
            assert!(s.workload.ops.len() <= 10);
        }
    }
}
