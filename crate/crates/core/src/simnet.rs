//! Deterministic discrete-event network simulator.
//!
//! Channels are reliable and reorder freely; nothing is duplicated or lost
//! except messages addressed to a crashed server. Each event (an
//! invocation, a delivery or a crash) advances a global step counter, and
//! history events are stamped with the step at which they happen.
//!
//! In seeded mode every step picks uniformly among the in-flight messages
//! and the clients that may invoke their next operation, so a run is a pure
//! function of the configuration, workload and seed. In scripted mode the
//! directives are applied in order and the run stops after the last one.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{EventKind, History, HistoryEvent};
use crate::metrics::{Metrics, MetricsRecorder, OpKind};
use crate::node::{ClientNode, Invocation, ProtocolError, ServerNode};
use crate::protocol::{Protocol, ProtocolOptions};
use crate::schedule::{Directive, Schedule, ScheduleKind, Script, Selector};
use crate::types::{validate_config, Config, ConfigError, Message, MessageKind, OpId, ProcessId, Role, Tag, Value};
use crate::workload::{OpSpec, Workload, WorkloadError};

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimOptions {
    pub step_budget: u64,
    pub protocol: ProtocolOptions,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            step_budget: DEFAULT_STEP_BUDGET,
            protocol: ProtocolOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvariantKind {
    /// A server's stored tag decreased.
    TagRegression,
    /// A server emitted a tag below one it had already processed.
    StaleEmission,
    /// A server replied twice to the same operation with the same kind.
    DuplicateReply,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantViolation {
    pub step: u64,
    pub server: ProcessId,
    pub kind: InvariantKind,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// Server events on which the assertions were evaluated.
    pub events_checked: u64,
    pub violations: Vec<InvariantViolation>,
}

impl InvariantReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    pub history: History,
    pub metrics: Metrics,
    pub invariants: InvariantReport,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("{crashes} servers crash but only f={f} failures are tolerated")]
    FaultBudgetExceeded { crashes: usize, f: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("directive {position}: selector {selector:?} matches {matches} in-flight messages")]
    ScheduleUnresolvable {
        position: usize,
        selector: Selector,
        matches: usize,
    },
    #[error("stuck at step {step}: {} operation(s) cannot complete ({})", pending.len(), pending.join(", "))]
    StuckExecution {
        step: u64,
        pending: Vec<String>,
        history: Box<History>,
    },
}

struct ServerSlot {
    node: Box<dyn ServerNode>,
    max_seen: Tag,
}

struct Active {
    op_id: OpId,
    invocation: Invocation,
    slot: usize,
}

struct ClientSlot {
    node: Box<dyn ClientNode>,
    active: Option<Active>,
    writes: u64,
    queue: VecDeque<OpSpec>,
}

struct Sim {
    step: u64,
    servers: BTreeMap<ProcessId, ServerSlot>,
    clients: BTreeMap<ProcessId, ClientSlot>,
    in_flight: Vec<Message>,
    crashed: BTreeSet<ProcessId>,
    history: History,
    metrics: MetricsRecorder,
    replies: BTreeSet<(ProcessId, OpId, MessageKind)>,
    invariants: InvariantReport,
}

impl Sim {
    fn new(config: &Config, protocol: Protocol, options: &ProtocolOptions) -> Self {
        let servers = config
            .servers()
            .into_iter()
            .map(|s| {
                let slot = ServerSlot {
                    node: protocol.build_server(s, config, options),
                    max_seen: Tag::initial(),
                };
                (s, slot)
            })
            .collect();
        let clients = config
            .writers()
            .into_iter()
            .chain(config.readers())
            .map(|c| {
                let slot = ClientSlot {
                    node: protocol.build_client(c, config),
                    active: None,
                    writes: 0,
                    queue: VecDeque::new(),
                };
                (c, slot)
            })
            .collect();
        Sim {
            step: 0,
            servers,
            clients,
            in_flight: Vec::new(),
            crashed: BTreeSet::new(),
            history: History::default(),
            metrics: MetricsRecorder::new(),
            replies: BTreeSet::new(),
            invariants: InvariantReport::default(),
        }
    }

    fn send(&mut self, messages: Vec<Message>) {
        for m in messages {
            self.metrics.sent(m.op, m.kind);
            if !self.crashed.contains(&m.destination) {
                self.in_flight.push(m);
            }
        }
    }

    fn crash(&mut self, server: ProcessId) {
        self.crashed.insert(server);
        self.in_flight.retain(|m| m.destination != server);
        self.step += 1;
    }

    fn invoke(&mut self, process: ProcessId, spec: OpSpec) -> Result<(), SimError> {
        let client = self
            .clients
            .get_mut(&process)
            .ok_or_else(|| SimError::InvalidSchedule(format!("{process} is not a client of this configuration")))?;
        let invocation = match spec {
            OpSpec::Read => Invocation::Read,
            OpSpec::Write { data } => {
                client.writes += 1;
                let bytes = data.unwrap_or_else(|| format!("{process}.{}", client.writes));
                Invocation::Write {
                    value: Value::data(bytes, process, client.writes),
                }
            }
        };
        let invoked = client.node.invoke(invocation.clone())?;
        let kind = if invocation.is_read() { OpKind::Read } else { OpKind::Write };
        let slot = self.metrics.begin(invoked.op, process, kind);
        for m in &invoked.messages {
            self.metrics.alias(m.op, slot);
        }
        self.history.push(HistoryEvent {
            index: self.step,
            kind: EventKind::Invoke,
            process,
            op: invocation.clone(),
            result: None,
            op_id: invoked.op,
        });
        client.active = Some(Active {
            op_id: invoked.op,
            invocation,
            slot,
        });
        self.send(invoked.messages);
        self.step += 1;
        Ok(())
    }

    fn deliver(&mut self, msg: Message) {
        if msg.destination.role == Role::Server {
            self.deliver_to_server(msg);
        } else {
            self.deliver_to_client(msg);
        }
        self.step += 1;
    }

    fn deliver_to_server(&mut self, msg: Message) {
        let Some(server) = self.servers.get_mut(&msg.destination) else {
            return;
        };
        let before = server.node.tag();
        let out = server.node.on_message(&msg);
        let after = server.node.tag();
        let monotone = server.node.tags_are_monotone();
        if let Some(t) = msg.tag {
            server.max_seen = server.max_seen.max(t);
        }
        let max_seen = server.max_seen;
        let id = msg.destination;
        self.invariants.events_checked += 1;
        if monotone && after < before {
            self.violation(
                id,
                InvariantKind::TagRegression,
                format!("tag went from {before} to {after} on {msg}"),
            );
        }
        for m in &out {
            if monotone {
                if let Some(t) = m.tag {
                    if t < max_seen {
                        self.violation(
                            id,
                            InvariantKind::StaleEmission,
                            format!("emitted {m} below processed tag {max_seen}"),
                        );
                    }
                }
            }
            if m.kind.is_reply() && !self.replies.insert((id, m.op, m.kind)) {
                self.violation(id, InvariantKind::DuplicateReply, format!("second {} for {}", m.kind, m.op));
            }
        }
        self.send(out);
    }

    fn violation(&mut self, server: ProcessId, kind: InvariantKind, detail: String) {
        self.invariants.violations.push(InvariantViolation {
            step: self.step,
            server,
            kind,
            detail,
        });
    }

    fn deliver_to_client(&mut self, msg: Message) {
        let Some(client) = self.clients.get_mut(&msg.destination) else {
            return;
        };
        let step = client.node.on_message(&msg);
        let active_slot = client.active.as_ref().map(|a| a.slot);
        if let Some(slot) = active_slot {
            if msg.kind.is_reply() && self.metrics.slot_of(msg.op) == Some(slot) {
                self.metrics.acknowledged(slot, msg.kind, msg.sender);
            }
            for m in &step.messages {
                self.metrics.alias(m.op, slot);
            }
        }
        if let Some(done) = step.completion {
            if let Some(active) = client.active.take() {
                self.metrics.completed(active.slot);
                self.history.push(HistoryEvent {
                    index: self.step,
                    kind: EventKind::Respond,
                    process: msg.destination,
                    op: active.invocation,
                    result: Some(done.result),
                    op_id: active.op_id,
                });
            }
        }
        self.send(step.messages);
    }

    fn pending_ops(&self) -> Vec<String> {
        self.clients
            .iter()
            .flat_map(|(p, c)| {
                let active = c.active.iter().map(|a| a.op_id.to_string());
                let queued = c.queue.iter().map(move |_| format!("{p}:queued"));
                active.chain(queued)
            })
            .collect()
    }

    fn stuck(self) -> SimError {
        SimError::StuckExecution {
            step: self.step,
            pending: self.pending_ops(),
            history: Box::new(self.history),
        }
    }

    fn finish(self) -> RunOutcome {
        RunOutcome {
            history: self.history,
            metrics: self.metrics.finish(),
            invariants: self.invariants,
        }
    }
}

fn check_crashes(config: &Config, schedule: &Schedule) -> Result<(), SimError> {
    let crashed = schedule.crashed_servers();
    if let Some(bad) = crashed
        .iter()
        .find(|s| !s.is_server() || s.index == 0 || s.index as usize > config.n_servers)
    {
        return Err(SimError::InvalidSchedule(format!("cannot crash {bad}")));
    }
    if crashed.len() > config.f {
        return Err(SimError::FaultBudgetExceeded {
            crashes: crashed.len(),
            f: config.f,
        });
    }
    Ok(())
}

/// Execute a workload under a schedule.
pub fn run(
    config: &Config,
    protocol: Protocol,
    workload: &Workload,
    schedule: &Schedule,
    options: &SimOptions,
) -> Result<RunOutcome, SimError> {
    validate_config(config, protocol.mode())?;
    check_crashes(config, schedule)?;
    let sim = Sim::new(config, protocol, &options.protocol);
    match schedule.kind {
        ScheduleKind::Seeded { seed } => {
            workload.validate(config)?;
            run_seeded(sim, workload, schedule, seed, options.step_budget)
        }
        ScheduleKind::Scripted => run_scripted(sim, schedule),
    }
}

fn run_seeded(
    mut sim: Sim,
    workload: &Workload,
    schedule: &Schedule,
    seed: u64,
    budget: u64,
) -> Result<RunOutcome, SimError> {
    let mut crashes: Vec<(u64, ProcessId)> = Vec::new();
    for d in &schedule.steps {
        match d {
            Directive::Crash { server, at_step } => crashes.push((at_step.unwrap_or(0), *server)),
            other => {
                return Err(SimError::InvalidSchedule(format!(
                    "seeded schedules accept only crash directives, got {other:?}"
                )))
            }
        }
    }
    crashes.sort();
    let mut crashes: VecDeque<(u64, ProcessId)> = crashes.into();

    let mut sequential: VecDeque<(ProcessId, OpSpec)> = VecDeque::new();
    if workload.sequential {
        sequential = workload.ops.iter().map(|o| (o.process, o.op.clone())).collect();
    } else {
        for o in &workload.ops {
            if let Some(c) = sim.clients.get_mut(&o.process) {
                c.queue.push_back(o.op.clone());
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        while let Some(&(at, server)) = crashes.front() {
            if at > sim.step {
                break;
            }
            crashes.pop_front();
            if !sim.crashed.contains(&server) {
                sim.crash(server);
            }
        }
        if sim.step >= budget {
            return Err(sim.stuck());
        }
        let invokable: Vec<ProcessId> = if workload.sequential {
            let busy = sim.clients.values().any(|c| c.active.is_some());
            match sequential.front() {
                Some((p, _)) if !busy => vec![*p],
                _ => Vec::new(),
            }
        } else {
            sim.clients
                .iter()
                .filter(|(_, c)| c.active.is_none() && !c.queue.is_empty())
                .map(|(p, _)| *p)
                .collect()
        };
        let enabled = sim.in_flight.len() + invokable.len();
        if enabled == 0 {
            let idle = sequential.is_empty() && sim.clients.values().all(|c| c.active.is_none() && c.queue.is_empty());
            if idle {
                break;
            }
            return Err(sim.stuck());
        }
        let pick = rng.gen_range(0..enabled);
        if pick < sim.in_flight.len() {
            let msg = sim.in_flight.swap_remove(pick);
            sim.deliver(msg);
        } else {
            let process = invokable[pick - sim.in_flight.len()];
            let spec = if workload.sequential {
                sequential.pop_front().map(|(_, s)| s)
            } else {
                sim.clients.get_mut(&process).and_then(|c| c.queue.pop_front())
            };
            if let Some(spec) = spec {
                sim.invoke(process, spec)?;
            }
        }
    }
    Ok(sim.finish())
}

fn run_scripted(mut sim: Sim, schedule: &Schedule) -> Result<RunOutcome, SimError> {
    for (position, d) in schedule.steps.iter().enumerate() {
        match d {
            Directive::Deliver(selector) => {
                let found: Vec<usize> = sim
                    .in_flight
                    .iter()
                    .enumerate()
                    .filter(|(_, m)| selector.matches(m))
                    .map(|(i, _)| i)
                    .collect();
                if found.len() != 1 {
                    return Err(SimError::ScheduleUnresolvable {
                        position,
                        selector: selector.clone(),
                        matches: found.len(),
                    });
                }
                let msg = sim.in_flight.remove(found[0]);
                sim.deliver(msg);
            }
            Directive::Crash { server, .. } => {
                if !sim.crashed.contains(server) {
                    sim.crash(*server);
                }
            }
            Directive::Invoke { process, op } => sim.invoke(*process, op.clone())?,
        }
    }
    Ok(sim.finish())
}

/// Replay a script: its header fixes protocol and configuration.
pub fn replay(script: &Script) -> Result<RunOutcome, SimError> {
    let options = SimOptions {
        protocol: script.header.options,
        ..SimOptions::default()
    };
    run(
        &script.header.config,
        script.header.protocol,
        &Workload::default(),
        &script.schedule(),
        &options,
    )
}
