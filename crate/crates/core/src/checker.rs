//! Atomicity checking of recorded histories.
//!
//! [`check_witness`] uses the tags carried by responses as the
//! linearization witness and runs in polynomial time. [`check_bruteforce`]
//! ignores tags and searches for a linearization of small histories; it is
//! the independent oracle for the witness check.
//!
//! Pending reads are discarded. A pending write may take effect or not.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{History, HistoryError, Operation};
use crate::node::Invocation;
use crate::types::{OpId, Tag, Value};

/// Largest history (after dropping pending reads) the exhaustive search accepts.
pub const BRUTEFORCE_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Property {
    /// Real-time order is respected.
    P1,
    /// Writes are totally ordered.
    P2,
    /// Every read returns the latest preceding write (or ⊥).
    P3,
    /// Write then read: the read's tag is at least the write's.
    A1,
    /// Sequential writes have strictly increasing tags.
    A2,
    /// Sequential reads have non-decreasing tags.
    A3,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub property: Property,
    /// The witnessing operations, earlier-invoked first. Both entries are the
    /// same operation when a single response is inconsistent on its own.
    pub pair: (OpId, OpId),
    pub explanation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub atomic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
}

impl Verdict {
    pub fn atomic() -> Self {
        Verdict {
            atomic: true,
            violation: None,
        }
    }

    pub fn violated(property: Property, a: OpId, b: OpId, explanation: impl Into<String>) -> Self {
        Verdict {
            atomic: false,
            violation: Some(Violation {
                property,
                pair: (a, b),
                explanation: explanation.into(),
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("response of {0} carries no tag; use the exhaustive checker")]
    UntaggedHistory(OpId),
    #[error("history has {ops} operations, exhaustive search is limited to {limit}")]
    HistoryTooLarge { ops: usize, limit: usize },
    #[error("read {0} responded without a value")]
    MissingReadValue(OpId),
}

/// Drop pending reads; they have no effect on any other operation.
fn relevant_ops(history: &History) -> Result<Vec<Operation>, CheckError> {
    Ok(history
        .operations()?
        .into_iter()
        .filter(|o| o.is_complete() || !o.is_read())
        .collect())
}

fn written_value(op: &Operation) -> Option<&Value> {
    match &op.invocation {
        Invocation::Write { value } => Some(value),
        Invocation::Read => None,
    }
}

/// Tag-witness check: A1, A2, A3 plus consistency of every read's tag with
/// the write it returns.
pub fn check_witness(history: &History) -> Result<Verdict, CheckError> {
    let ops = relevant_ops(history)?;
    for o in &ops {
        if o.is_complete() && o.result.is_none() {
            return Err(CheckError::UntaggedHistory(o.op_id));
        }
    }
    let writes: Vec<&Operation> = ops.iter().filter(|o| !o.is_read()).collect();
    let reads: Vec<&Operation> = ops.iter().filter(|o| o.is_read()).collect();

    let mut by_value: BTreeMap<&Value, usize> = BTreeMap::new();
    let mut write_tags: Vec<Option<Tag>> = Vec::with_capacity(writes.len());
    for (i, w) in writes.iter().enumerate() {
        let value = written_value(w).expect("write carries a value");
        if let Some(&j) = by_value.get(value) {
            return Ok(Verdict::violated(
                Property::P2,
                writes[j].op_id,
                w.op_id,
                format!("two writes of the same value {value}"),
            ));
        }
        by_value.insert(value, i);
        let tag = w.result.as_ref().map(|r| r.tag);
        if let Some(result) = &w.result {
            if &result.value != value {
                return Ok(Verdict::violated(
                    Property::P2,
                    w.op_id,
                    w.op_id,
                    format!("write of {value} reported {}", result.value),
                ));
            }
        }
        write_tags.push(tag);
    }

    // Every read's tag must be the tag of the write whose value it returns.
    for r in &reads {
        let result = r.result.as_ref().expect("complete reads carry results");
        if result.value.is_bottom() {
            if result.tag != Tag::initial() {
                return Ok(Verdict::violated(
                    Property::P3,
                    r.op_id,
                    r.op_id,
                    format!("returned ⊥ with non-initial tag {}", result.tag),
                ));
            }
            continue;
        }
        let Some(&wi) = by_value.get(&result.value) else {
            return Ok(Verdict::violated(
                Property::P3,
                r.op_id,
                r.op_id,
                format!("returned {} which was never written", result.value),
            ));
        };
        let w = writes[wi];
        if r.precedes(w) {
            return Ok(Verdict::violated(
                Property::P1,
                r.op_id,
                w.op_id,
                format!("returned {} before its write was invoked", result.value),
            ));
        }
        match write_tags[wi] {
            Some(t) if t != result.tag => {
                return Ok(Verdict::violated(
                    Property::P3,
                    w.op_id,
                    r.op_id,
                    format!("returned {} with tag {} but it was written with tag {t}", result.value, result.tag),
                ));
            }
            Some(_) => {}
            // a pending write is identified through the reads that return it
            None => write_tags[wi] = Some(result.tag),
        }
    }

    let tagged: Vec<(&Operation, Tag)> = writes
        .iter()
        .zip(&write_tags)
        .filter_map(|(w, t)| t.map(|t| (*w, t)))
        .collect();
    for (i, (a, ta)) in tagged.iter().enumerate() {
        if *ta == Tag::initial() {
            return Ok(Verdict::violated(Property::P2, a.op_id, a.op_id, "write carries the initial tag"));
        }
        for (b, tb) in &tagged[i + 1..] {
            if ta == tb {
                return Ok(Verdict::violated(
                    Property::P2,
                    a.op_id,
                    b.op_id,
                    format!("two writes share tag {ta}"),
                ));
            }
        }
    }

    // A2: sequential writes have increasing tags
    for (a, ta) in &tagged {
        for (b, tb) in &tagged {
            if a.precedes(b) && tb <= ta {
                return Ok(Verdict::violated(
                    Property::A2,
                    a.op_id,
                    b.op_id,
                    format!("write tagged {tb} follows a write tagged {ta}"),
                ));
            }
        }
    }

    // A3: sequential reads have non-decreasing tags
    for r1 in &reads {
        let t1 = r1.result.as_ref().expect("complete").tag;
        for r2 in &reads {
            let t2 = r2.result.as_ref().expect("complete").tag;
            if r1.precedes(r2) && t2 < t1 {
                return Ok(Verdict::violated(
                    Property::A3,
                    r1.op_id,
                    r2.op_id,
                    format!("read returned tag {t2} after an earlier read returned {t1}"),
                ));
            }
        }
    }

    for r in &reads {
        let rt = r.result.as_ref().expect("complete").tag;
        for (w, wt) in &tagged {
            // A1: a read after a complete write sees at least its tag
            if w.precedes(r) && rt < *wt {
                return Ok(Verdict::violated(
                    Property::A1,
                    w.op_id,
                    r.op_id,
                    format!("read returned tag {rt} after a write tagged {wt} completed"),
                ));
            }
            // a read that completes before a write starts cannot be ordered after it
            if r.precedes(w) && *wt <= rt {
                return Ok(Verdict::violated(
                    Property::P1,
                    r.op_id,
                    w.op_id,
                    format!("read returned tag {rt} before a write tagged {wt} started"),
                ));
            }
        }
    }

    Ok(Verdict::atomic())
}

/// Search-friendly view of one operation.
#[derive(Clone, Copy, Debug)]
struct Node {
    inv: u64,
    resp: u64,
    is_read: bool,
    /// For writes: the value id written. For reads: the value id returned,
    /// `None` if no write in the history produced it.
    value: Option<usize>,
    pending: bool,
}

const BOTTOM: usize = 0;

fn nodes(ops: &[Operation]) -> Result<Vec<Node>, CheckError> {
    let mut ids: BTreeMap<&Value, usize> = BTreeMap::new();
    for o in ops {
        if let Some(v) = written_value(o) {
            let next = ids.len() + 1;
            ids.entry(v).or_insert(next);
        }
    }
    ops.iter()
        .map(|o| {
            let value = match &o.invocation {
                Invocation::Write { value } => Some(ids[value]),
                Invocation::Read => {
                    let result = o.result.as_ref().ok_or(CheckError::MissingReadValue(o.op_id))?;
                    if result.value.is_bottom() {
                        Some(BOTTOM)
                    } else {
                        ids.get(&result.value).copied()
                    }
                }
            };
            Ok(Node {
                inv: o.invoked_at,
                resp: o.responded_at.unwrap_or(u64::MAX),
                is_read: o.is_read(),
                value,
                pending: !o.is_complete(),
            })
        })
        .collect()
}

/// Exhaustive linearization search over `nodes`, memoised on
/// (linearized set, current value).
fn linearizable(nodes: &[Node]) -> bool {
    if nodes.iter().any(|n| n.is_read && n.value.is_none()) {
        return false;
    }
    let required: u32 = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.pending)
        .fold(0, |m, (i, _)| m | (1 << i));
    let mut seen = HashSet::new();
    search(nodes, required, 0, BOTTOM, &mut seen)
}

fn search(nodes: &[Node], required: u32, done: u32, current: usize, seen: &mut HashSet<(u32, usize)>) -> bool {
    if done & required == required {
        return true;
    }
    if !seen.insert((done, current)) {
        return false;
    }
    let earliest_response = nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| done & (1 << i) == 0)
        .map(|(_, n)| n.resp)
        .min()
        .unwrap_or(u64::MAX);
    for (i, n) in nodes.iter().enumerate() {
        if done & (1 << i) != 0 || n.inv > earliest_response {
            continue;
        }
        let next = done | (1 << i);
        let ok = if n.is_read {
            n.value == Some(current) && search(nodes, required, next, current, seen)
        } else {
            search(nodes, required, next, n.value.expect("writes have values"), seen)
        };
        if ok {
            return true;
        }
    }
    false
}

/// Exhaustive check: atomic iff some total order extends real-time
/// precedence and gives every read the value of the latest preceding
/// write (⊥ if none).
pub fn check_bruteforce(history: &History) -> Result<Verdict, CheckError> {
    let ops = relevant_ops(history)?;
    if ops.len() > BRUTEFORCE_LIMIT {
        return Err(CheckError::HistoryTooLarge {
            ops: ops.len(),
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let all = nodes(&ops)?;
    if linearizable(&all) {
        return Ok(Verdict::atomic());
    }
    Ok(explain(&ops, &all))
}

/// Find a small witnessing pair for a non-linearizable history. A subset
/// of operations that keeps every read's source write is linearizable
/// whenever the whole history is, so a failing subset is a sound witness.
fn explain(ops: &[Operation], all: &[Node]) -> Verdict {
    let source = |i: usize| -> Option<usize> {
        let n = all[i];
        if !n.is_read || n.value == Some(BOTTOM) {
            return None;
        }
        all.iter().position(|m| !m.is_read && m.value == n.value)
    };
    let subset = |members: &[usize]| -> Vec<Node> {
        let mut idx: Vec<usize> = members.iter().copied().chain(members.iter().filter_map(|&i| source(i))).collect();
        idx.sort_unstable();
        idx.dedup();
        idx.into_iter().map(|i| all[i]).collect()
    };

    for i in 0..ops.len() {
        if all[i].is_read && !linearizable(&subset(&[i])) {
            let r = &ops[i];
            return match source(i) {
                Some(w) => Verdict::violated(
                    Property::P1,
                    r.op_id,
                    ops[w].op_id,
                    "read returned the value of a write invoked after it responded",
                ),
                None => Verdict::violated(Property::P3, r.op_id, r.op_id, "read returned a value that was never written"),
            };
        }
    }
    for i in 0..ops.len() {
        for j in i + 1..ops.len() {
            if !linearizable(&subset(&[i, j])) {
                let property = if all[i].is_read || all[j].is_read {
                    Property::P3
                } else {
                    Property::P2
                };
                return Verdict::violated(
                    property,
                    ops[i].op_id,
                    ops[j].op_id,
                    "no order of these operations and the writes they read from is consistent with real time",
                );
            }
        }
    }
    // Larger cores: blame an operation whose removal makes the rest linearizable.
    for i in 0..ops.len() {
        let rest: Vec<Node> = (0..ops.len()).filter(|&k| k != i).map(|k| all[k]).collect();
        if linearizable(&rest) {
            let other = source(i).unwrap_or(i);
            let (a, b) = if ops[other].invoked_at <= ops[i].invoked_at { (other, i) } else { (i, other) };
            return Verdict::violated(
                if all[i].is_read { Property::P3 } else { Property::P2 },
                ops[a].op_id,
                ops[b].op_id,
                format!("removing {} makes the history linearizable", ops[i].op_id),
            );
        }
    }
    let first = ops.first().map(|o| o.op_id).expect("a non-linearizable history has operations");
    let second = ops.get(1).map(|o| o.op_id).unwrap_or(first);
    Verdict::violated(Property::P3, first, second, "no linearization exists")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{EventKind, HistoryEvent};
    use crate::types::{ProcessId, TaggedValue};

    /// Tiny DSL: (process, kind, index, value-for-writes, returned tag/value for responses)
    struct Builder {
        events: Vec<HistoryEvent>,
        seq: BTreeMap<ProcessId, u64>,
    }

    impl Builder {
        fn new() -> Self {
            Builder {
                events: Vec::new(),
                seq: BTreeMap::new(),
            }
        }

        fn val(name: &str) -> Value {
            Value::data(name, ProcessId::writer(1), name.len() as u64)
        }

        fn invoke(&mut self, p: ProcessId, at: u64, write: Option<&str>) -> &mut Self {
            let seq = self.seq.entry(p).or_insert(0);
            *seq += 1;
            let op = match write {
                Some(v) => Invocation::Write { value: Self::val(v) },
                None => Invocation::Read,
            };
            self.events.push(HistoryEvent {
                index: at,
                kind: EventKind::Invoke,
                process: p,
                op,
                result: None,
                op_id: OpId::new(p, *seq),
            });
            self
        }

        fn respond(&mut self, p: ProcessId, at: u64, ts: u64, v: Option<&str>) -> &mut Self {
            let seq = self.seq[&p];
            let op = self
                .events
                .iter()
                .rev()
                .find(|e| e.process == p)
                .map(|e| e.op.clone())
                .unwrap();
            let result = match v {
                Some(v) => TaggedValue::new(Tag::new(ts, ProcessId::writer(1)), Self::val(v)),
                None => TaggedValue::initial(),
            };
            self.events.push(HistoryEvent {
                index: at,
                kind: EventKind::Respond,
                process: p,
                op,
                result: Some(result),
                op_id: OpId::new(p, seq),
            });
            self
        }

        fn build(&self) -> History {
            let mut events = self.events.clone();
            events.sort_by_key(|e| e.index);
            History::new(events)
        }
    }

    const W: ProcessId = ProcessId::writer(1);
    const R1: ProcessId = ProcessId::reader(1);
    const R2: ProcessId = ProcessId::reader(2);

    #[test]
    fn write_then_read_same_tag_is_atomic() {
        let h = Builder::new()
            .invoke(W, 0, Some("a"))
            .respond(W, 1, 1, Some("a"))
            .invoke(R1, 2, None)
            .respond(R1, 3, 1, Some("a"))
            .build();
        assert!(check_witness(&h).unwrap().atomic);
        assert!(check_bruteforce(&h).unwrap().atomic);
    }

    #[test]
    fn stale_initial_read_violates_a1() {
        let h = Builder::new()
            .invoke(W, 0, Some("a"))
            .respond(W, 1, 1, Some("a"))
            .invoke(R1, 2, None)
            .respond(R1, 3, 0, None)
            .build();
        let v = check_witness(&h).unwrap();
        assert!(!v.atomic);
        assert_eq!(v.violation.unwrap().property, Property::A1);
        assert!(!check_bruteforce(&h).unwrap().atomic);
    }

    #[test]
    fn sequential_read_inversion_violates_a3() {
        // w(a) and w(b) are sequential but concurrent with both reads
        let h = Builder::new()
            .invoke(W, 0, Some("a"))
            .invoke(R1, 1, None)
            .respond(W, 2, 1, Some("a"))
            .invoke(W, 3, Some("bb"))
            .respond(R1, 4, 2, Some("bb"))
            .invoke(R2, 5, None)
            .respond(R2, 6, 1, Some("a"))
            .respond(W, 7, 2, Some("bb"))
            .build();
        let v = check_witness(&h).unwrap();
        let violation = v.violation.unwrap();
        assert_eq!(violation.property, Property::A3);
        assert_eq!(violation.pair, (OpId::new(R1, 1), OpId::new(R2, 1)));
        let b = check_bruteforce(&h).unwrap();
        assert!(!b.atomic);
    }

    #[test]
    fn concurrent_writes_with_reads_is_atomic() {
        let w2 = ProcessId::writer(2);
        let h = Builder::new()
            .invoke(W, 0, Some("a"))
            .invoke(w2, 1, Some("bb"))
            .invoke(R1, 2, None)
            .respond(W, 3, 1, Some("a"))
            .respond(R1, 4, 1, Some("a"))
            .respond(w2, 5, 2, Some("bb"))
            .invoke(R2, 6, None)
            .respond(R2, 7, 2, Some("bb"))
            .build();
        assert!(check_bruteforce(&h).unwrap().atomic);
        assert!(check_witness(&h).unwrap().atomic);
    }

    #[test]
    fn stale_read_after_both_concurrent_writes_is_not_forced_by_tags_alone() {
        // both writes complete, then reads return a then bb: no order works
        let w2 = ProcessId::writer(2);
        let h = Builder::new()
            .invoke(W, 0, Some("a"))
            .invoke(w2, 1, Some("bb"))
            .respond(W, 2, 1, Some("a"))
            .respond(w2, 3, 2, Some("bb"))
            .invoke(R1, 4, None)
            .respond(R1, 5, 1, Some("a"))
            .invoke(R2, 6, None)
            .respond(R2, 7, 2, Some("bb"))
            .build();
        let b = check_bruteforce(&h).unwrap();
        assert!(!b.atomic);
        assert_eq!(b.violation.unwrap().pair, (OpId::new(R1, 1), OpId::new(R2, 1)));
        assert!(!check_witness(&h).unwrap().atomic);
    }

    #[test]
    fn single_bottom_read_is_atomic() {
        let h = Builder::new().invoke(R1, 0, None).respond(R1, 1, 0, None).build();
        assert!(check_witness(&h).unwrap().atomic);
        assert!(check_bruteforce(&h).unwrap().atomic);
    }

    #[test]
    fn pending_write_may_be_linearized_or_dropped() {
        let seen = Builder::new()
            .invoke(W, 0, Some("a"))
            .invoke(R1, 1, None)
            .respond(R1, 2, 1, Some("a"))
            .build();
        assert!(check_bruteforce(&seen).unwrap().atomic);
        assert!(check_witness(&seen).unwrap().atomic);
        let unseen = Builder::new()
            .invoke(W, 0, Some("a"))
            .invoke(R1, 1, None)
            .respond(R1, 2, 0, None)
            .build();
        assert!(check_bruteforce(&unseen).unwrap().atomic);
        assert!(check_witness(&unseen).unwrap().atomic);
    }

    #[test]
    fn pending_reads_are_discarded() {
        let h = Builder::new()
            .invoke(W, 0, Some("a"))
            .respond(W, 1, 1, Some("a"))
            .invoke(R1, 2, None)
            .build();
        assert!(check_witness(&h).unwrap().atomic);
        assert!(check_bruteforce(&h).unwrap().atomic);
    }

    #[test]
    fn untagged_and_oversized_histories_are_errors() {
        let mut h = Builder::new().invoke(R1, 0, None).respond(R1, 1, 0, None).build();
        h.events[1].result = None;
        assert!(matches!(check_witness(&h), Err(CheckError::UntaggedHistory(_))));

        let mut b = Builder::new();
        for i in 0..11 {
            b.invoke(R1, 2 * i, None).respond(R1, 2 * i + 1, 0, None);
        }
        assert!(matches!(
            check_bruteforce(&b.build()),
            Err(CheckError::HistoryTooLarge { ops: 11, limit: 10 })
        ));
    }

    #[test]
    fn read_of_unwritten_value_is_rejected() {
        let h = Builder::new().invoke(R1, 0, None).respond(R1, 1, 3, Some("zzz")).build();
        assert_eq!(check_witness(&h).unwrap().violation.unwrap().property, Property::P3);
        let b = check_bruteforce(&h).unwrap();
        assert_eq!(b.violation.unwrap().pair, (OpId::new(R1, 1), OpId::new(R1, 1)));
    }
}
