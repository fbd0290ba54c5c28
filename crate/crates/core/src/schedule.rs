//! Delivery schedules: seeded random interleavings or explicit scripts.
//!
//! A script file is line-delimited JSON. The first line is a
//! [`ScriptHeader`]; each following line is one [`Directive`]:
//!
//! ```text
//! {"name":"example","protocol":"ohsam","config":{"n_servers":3,"n_readers":1,"n_writers":1,"f":1}}
//! {"invoke":{"process":"w1","op":{"type":"write","data":"a"}}}
//! {"deliver":{"kind":"writeRequest","from":"w1","to":"s1"}}
//! {"crash":{"server":"s3"}}
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Protocol, ProtocolOptions};
use crate::types::{Config, Message, MessageKind, OpId, ProcessId};
use crate::workload::OpSpec;

/// Picks one in-flight message. Optional fields narrow the match.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub kind: MessageKind,
    pub from: ProcessId,
    pub to: ProcessId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<OpId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relay_origin: Option<ProcessId>,
}

impl Selector {
    pub fn new(kind: MessageKind, from: ProcessId, to: ProcessId) -> Self {
        Selector {
            kind,
            from,
            to,
            op: None,
            relay_origin: None,
        }
    }

    pub fn op(mut self, op: OpId) -> Self {
        self.op = Some(op);
        self
    }

    pub fn matches(&self, msg: &Message) -> bool {
        msg.kind == self.kind
            && msg.sender == self.from
            && msg.destination == self.to
            && self.op.is_none_or(|op| msg.op == op)
            && self.relay_origin.is_none_or(|o| msg.relay_origin == Some(o))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directive {
    Deliver(Selector),
    /// In a seeded schedule the crash fires once the step counter reaches
    /// `at_step` (immediately when absent). In a script it fires at its
    /// position and `at_step` is ignored.
    Crash {
        server: ProcessId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at_step: Option<u64>,
    },
    Invoke {
        process: ProcessId,
        op: OpSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ScheduleKind {
    Seeded { seed: u64 },
    Scripted,
}

/// Seeded schedules only use crash directives; scripted schedules are
/// driven entirely by their directives and ignore the workload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    #[serde(default)]
    pub steps: Vec<Directive>,
}

impl Schedule {
    pub fn seeded(seed: u64) -> Self {
        Schedule {
            kind: ScheduleKind::Seeded { seed },
            steps: Vec::new(),
        }
    }

    pub fn scripted(steps: Vec<Directive>) -> Self {
        Schedule {
            kind: ScheduleKind::Scripted,
            steps,
        }
    }

    pub fn with_crash(mut self, server: ProcessId, at_step: u64) -> Self {
        self.steps.push(Directive::Crash {
            server,
            at_step: Some(at_step),
        });
        self
    }

    /// Distinct servers named by crash directives.
    pub fn crashed_servers(&self) -> Vec<ProcessId> {
        let mut out: Vec<ProcessId> = self
            .steps
            .iter()
            .filter_map(|d| match d {
                Directive::Crash { server, .. } => Some(*server),
                _ => None,
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptHeader {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub protocol: Protocol,
    pub config: Config,
    #[serde(default)]
    pub options: ProtocolOptions,
}

/// A replayable script: header plus directives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Script {
    pub header: ScriptHeader,
    pub steps: Vec<Directive>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("script is empty")]
    Empty,
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl Script {
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for d in &self.steps {
            out.push_str(&serde_json::to_string(d).expect("directive serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ScriptError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (i, first) = lines.next().ok_or(ScriptError::Empty)?;
        let header = serde_json::from_str(first).map_err(|source| ScriptError::Parse { line: i + 1, source })?;
        let steps = lines
            .map(|(i, l)| serde_json::from_str(l).map_err(|source| ScriptError::Parse { line: i + 1, source }))
            .collect::<Result<_, _>>()?;
        Ok(Script { header, steps })
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::scripted(self.steps.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directive_json_shape() {
        let d = Directive::Deliver(Selector::new(
            MessageKind::WriteRequest,
            ProcessId::writer(1),
            ProcessId::server(2),
        ));
        assert_eq!(
            serde_json::to_string(&d).unwrap(),
            r#"{"deliver":{"kind":"writeRequest","from":"w1","to":"s2"}}"#
        );
        let c: Directive = serde_json::from_str(r#"{"crash":{"server":"s3","at_step":4}}"#).unwrap();
        assert_eq!(
            c,
            Directive::Crash {
                server: ProcessId::server(3),
                at_step: Some(4)
            }
        );
    }

    #[test]
    fn script_roundtrip() {
        let script = Script {
            header: ScriptHeader {
                name: Some("t".into()),
                protocol: Protocol::OhSam,
                config: Config::new(3, 1, 1, 1),
                options: ProtocolOptions::default(),
            },
            steps: vec![
                Directive::Invoke {
                    process: ProcessId::reader(1),
                    op: OpSpec::Read,
                },
                Directive::Crash {
                    server: ProcessId::server(1),
                    at_step: None,
                },
            ],
        };
        let back = Script::from_jsonl(&script.to_jsonl()).unwrap();
        assert_eq!(back, script);
        assert!(matches!(Script::from_jsonl("\n"), Err(ScriptError::Empty)));
    }

    #[test]
    fn selector_narrowing() {
        let op = OpId::new(ProcessId::reader(1), 1);
        let mut m = Message::bare(MessageKind::ReadRelay, op, ProcessId::server(1), ProcessId::server(2));
        m.relay_origin = Some(ProcessId::server(1));
        let sel = Selector::new(MessageKind::ReadRelay, ProcessId::server(1), ProcessId::server(2));
        assert!(sel.matches(&m));
        assert!(sel.clone().op(op).matches(&m));
        assert!(!sel.op(OpId::new(ProcessId::reader(1), 2)).matches(&m));
    }
}
