//! Scripted executions that drive the three-exchange write protocol into
//! the executions `xi1p`, `xi2p`, `xi3pp` and `xi4`.
//!
//! All four use three servers with decision threshold `x = 2`, writers
//! `w1` (value `"a"`, write ω1) and `w2` (value `"b"`, write ω2), and
//! readers `r1` (ρ1) and `r2` (ρ2). Server `s1` receives ω1 before ω2,
//! `s2` receives ω2 before ω1, and `s3` follows either the first order
//! ([`Scheme::OmegaOneFirst`]) or the second ([`Scheme::OmegaTwoFirst`]).
//! Both writes complete before any read starts.
//!
//! * `xi1p`: ρ1 is served from the relays of `s1` and `s2`; it returns `"b"`.
//! * `xi2p`: ρ1 is served from the relays of `s2` and `s3`; it returns `"a"`.
//! * `xi3pp`: ρ1 then ρ2, with `s3` in the first order; both return `"b"`.
//! * `xi4`: ρ1 as in `xi1p`, then ρ2 as in `xi2p`; ρ1 returns `"b"` and the
//!   later ρ2 returns `"a"`, which no atomic register allows.

use crate::protocol::{Protocol, ProtocolOptions};
use crate::schedule::{Directive, Script, ScriptHeader, Selector};
use crate::types::{Config, MessageKind, OpId, ProcessId};
use crate::workload::OpSpec;

pub const THRESHOLD: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    OmegaOneFirst,
    OmegaTwoFirst,
}

fn s(i: u32) -> ProcessId {
    ProcessId::server(i)
}

const W1: ProcessId = ProcessId::writer(1);
const W2: ProcessId = ProcessId::writer(2);
const R1: ProcessId = ProcessId::reader(1);
const R2: ProcessId = ProcessId::reader(2);

fn deliver(kind: MessageKind, from: ProcessId, to: ProcessId, op: OpId) -> Directive {
    Directive::Deliver(Selector::new(kind, from, to).op(op))
}

struct Builder {
    steps: Vec<Directive>,
}

impl Builder {
    fn servers() -> [ProcessId; 3] {
        [s(1), s(2), s(3)]
    }

    /// Both writes, with per-server receipt orders, completed through the
    /// acks of `ack_from`.
    fn writes(scheme: Scheme, ack_from: [ProcessId; 2]) -> Self {
        let w1 = OpId::new(W1, 1);
        let w2 = OpId::new(W2, 1);
        let mut steps = vec![
            Directive::Invoke {
                process: W1,
                op: OpSpec::Write { data: Some("a".into()) },
            },
            Directive::Invoke {
                process: W2,
                op: OpSpec::Write { data: Some("b".into()) },
            },
        ];
        let s3_order = match scheme {
            Scheme::OmegaOneFirst => [(W1, w1), (W2, w2)],
            Scheme::OmegaTwoFirst => [(W2, w2), (W1, w1)],
        };
        let orders = [
            (s(1), [(W1, w1), (W2, w2)]),
            (s(2), [(W2, w2), (W1, w1)]),
            (s(3), s3_order),
        ];
        for (server, order) in orders {
            for (writer, op) in order {
                steps.push(deliver(MessageKind::WriteRequest, writer, server, op));
            }
        }
        for op in [w1, w2] {
            for from in Self::servers() {
                for to in Self::servers() {
                    steps.push(deliver(MessageKind::WriteRelay, from, to, op));
                }
            }
        }
        for (writer, op) in [(W1, w1), (W2, w2)] {
            for server in ack_from {
                steps.push(deliver(MessageKind::WriteAck, server, writer, op));
            }
        }
        Builder { steps }
    }

    /// A read by `reader` whose requests reach `quorum` only; those servers
    /// exchange relays and answer.
    fn read(mut self, reader: ProcessId, quorum: [ProcessId; 2]) -> Self {
        let op = OpId::new(reader, 1);
        self.steps.push(Directive::Invoke {
            process: reader,
            op: OpSpec::Read,
        });
        for server in quorum {
            self.steps.push(deliver(MessageKind::ReadRequest, reader, server, op));
        }
        for to in quorum {
            for from in quorum {
                self.steps.push(deliver(MessageKind::ReadRelay, from, to, op));
            }
        }
        for server in quorum {
            self.steps.push(deliver(MessageKind::ReadAck, server, reader, op));
        }
        self
    }

    fn script(self, name: &str) -> Script {
        Script {
            header: ScriptHeader {
                name: Some(name.to_string()),
                protocol: Protocol::Naive3x,
                config: Config::new(3, 2, 2, 1),
                options: ProtocolOptions {
                    naive_threshold: Some(THRESHOLD),
                    ..ProtocolOptions::default()
                },
            },
            steps: self.steps,
        }
    }
}

pub fn xi1p() -> Script {
    Builder::writes(Scheme::OmegaTwoFirst, [s(1), s(2)])
        .read(R1, [s(1), s(2)])
        .script("xi1p")
}

pub fn xi2p() -> Script {
    Builder::writes(Scheme::OmegaTwoFirst, [s(2), s(3)])
        .read(R1, [s(2), s(3)])
        .script("xi2p")
}

pub fn xi3pp() -> Script {
    Builder::writes(Scheme::OmegaOneFirst, [s(1), s(2)])
        .read(R1, [s(1), s(2)])
        .read(R2, [s(2), s(3)])
        .script("xi3pp")
}

pub fn xi4() -> Script {
    Builder::writes(Scheme::OmegaTwoFirst, [s(1), s(2)])
        .read(R1, [s(1), s(2)])
        .read(R2, [s(2), s(3)])
        .script("xi4")
}

/// Every script with the file stem it ships under.
pub fn all() -> Vec<(&'static str, Script)> {
    vec![("xi1p", xi1p()), ("xi2p", xi2p()), ("xi3pp", xi3pp()), ("xi4", xi4())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::{check_bruteforce, check_witness};
    use crate::history::Operation;
    use crate::simnet::replay;
    use crate::types::Value;

    fn read_data(ops: &[Operation], reader: ProcessId) -> Vec<u8> {
        let op = ops.iter().find(|o| o.process == reader).unwrap();
        match &op.result.as_ref().unwrap().value {
            Value::Data { bytes, .. } => bytes.clone(),
            Value::Bottom => Vec::new(),
        }
    }

    #[test]
    fn single_read_scripts_are_atomic() {
        for (script, expected) in [(xi1p(), b"b"), (xi2p(), b"a")] {
            let out = replay(&script).unwrap();
            let ops = out.history.operations().unwrap();
            assert!(ops.iter().all(Operation::is_complete));
            assert_eq!(read_data(&ops, R1), expected);
            assert!(check_witness(&out.history).unwrap().atomic);
            assert!(check_bruteforce(&out.history).unwrap().atomic);
        }
    }

    #[test]
    fn xi3pp_keeps_both_reads_on_omega_two() {
        let out = replay(&xi3pp()).unwrap();
        let ops = out.history.operations().unwrap();
        assert_eq!(read_data(&ops, R1), b"b");
        assert_eq!(read_data(&ops, R2), b"b");
        assert!(check_witness(&out.history).unwrap().atomic);
        assert!(check_bruteforce(&out.history).unwrap().atomic);
    }

    #[test]
    fn xi4_is_not_atomic() {
        let out = replay(&xi4()).unwrap();
        let ops = out.history.operations().unwrap();
        assert_eq!(read_data(&ops, R1), b"b");
        assert_eq!(read_data(&ops, R2), b"a");
        let rho = (OpId::new(R1, 1), OpId::new(R2, 1));
        for verdict in [check_witness(&out.history).unwrap(), check_bruteforce(&out.history).unwrap()] {
            assert!(!verdict.atomic);
            assert_eq!(verdict.violation.unwrap().pair, rho);
        }
    }
}
