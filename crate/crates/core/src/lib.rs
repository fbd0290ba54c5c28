//! Atomic read/write register emulations over asynchronous message passing,
//! together with a deterministic network simulator and atomicity checkers.
//!
//! The register protocols are written as pure event-driven state machines
//! (see [`node`]), so the same code runs under [`simnet`] and over TCP.

pub mod abd;
pub mod checker;
pub mod counterexample;
pub mod history;
pub mod metrics;
pub mod naive3x;
pub mod node;
pub mod ohmam;
pub mod ohsam;
pub mod protocol;
pub mod relay_read;
pub mod schedule;
pub mod simnet;
pub mod testkit;
pub mod types;
pub mod workload;

pub use checker::{check_bruteforce, check_witness, CheckError, Property, Verdict, Violation};
pub use history::{EventKind, History, HistoryEvent, Operation};
pub use node::{ClientNode, ClientStep, Completion, Invocation, Invoked, ProtocolError, ServerNode};
pub use protocol::{Protocol, ProtocolOptions};
pub use metrics::{Metrics, OpKind, OpMetrics};
pub use relay_read::RelayGc;
pub use schedule::{Directive, Schedule, ScheduleKind, Script, ScriptHeader, Selector};
pub use simnet::{replay, run, InvariantReport, RunOutcome, SimError, SimOptions};
pub use types::*;
pub use workload::{OpSpec, PlannedOp, Workload};
