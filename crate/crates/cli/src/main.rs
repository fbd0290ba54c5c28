use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ohram_core::checker::BRUTEFORCE_LIMIT;
use ohram_core::metrics::{expected_costs, Cost};
use ohram_core::{
    check_bruteforce, check_witness, replay, run, Config, History, Metrics, ProcessId, Protocol, ProtocolOptions,
    RelayGc, RunOutcome, Schedule, Script, SimError, SimOptions, Verdict, Workload,
};
use ohram_net::{Client, ClientOptions, Clock, Membership, NetError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

mod exit {
    pub const PASS: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const NON_ATOMIC: u8 = 2;
    pub const STUCK: u8 = 3;
    pub const CONFIG: u8 = 4;
}

#[derive(Parser)]
#[command(name = "ohram", version, about = "Atomic register protocols: simulate, replay, check and run")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a workload in the deterministic simulator and check the history.
    Simulate(SimulateArgs),
    /// Replay a schedule script and check the resulting history.
    Replay {
        script: PathBuf,
        /// Directory for history.jsonl, metrics.json, invariants.json and verdict.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a history file for atomicity.
    Check {
        history: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
    },
    /// Run one server daemon until killed.
    Serve {
        #[arg(long)]
        membership: PathBuf,
        /// 1-based position of this server in the membership list.
        #[arg(long)]
        index: u32,
        #[arg(long, value_enum, default_value_t = GcArg::UntilNextOp)]
        relay_gc: GcArg,
    },
    /// Run a reader or writer against live daemons and record its history.
    Client {
        #[arg(long)]
        membership: PathBuf,
        /// Client identity, e.g. `w1` or `r2`. Writers write, readers read.
        #[arg(long)]
        id: ProcessId,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        history: PathBuf,
        #[arg(long, default_value_t = 250)]
        timeout_ms: u64,
        #[arg(long, default_value_t = 20)]
        retries: u32,
    },
    /// Compare failure-free costs with the closed forms.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [3usize, 5, 7])]
        servers: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = Protocol::CORRECT.map(|p| p.to_string()))]
        protocols: Vec<String>,
        /// Print the grid as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    protocol: Protocol,
    #[arg(long)]
    servers: usize,
    #[arg(long, default_value_t = 1)]
    readers: usize,
    #[arg(long, default_value_t = 1)]
    writers: usize,
    #[arg(long, default_value_t = 0)]
    f: usize,
    /// Sequential operations such as `w1,r1,r2`; random concurrent ones when absent.
    #[arg(long)]
    ops: Option<Workload>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Crashes as `s2@15,s4@0` (server at step), or `random`.
    #[arg(long)]
    crash_plan: Option<String>,
    #[arg(long)]
    naive_threshold: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    /// Tag witness, plus exhaustive search when the history is small.
    Auto,
    Witness,
    Bruteforce,
}

#[derive(Clone, Copy, ValueEnum)]
enum GcArg {
    UntilNextOp,
    Disabled,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: exit::FAILURE,
            error: e.into(),
        }
    }
}

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

fn sim_failure(e: SimError) -> Failure {
    let code = match &e {
        SimError::Config(_) | SimError::Workload(_) | SimError::FaultBudgetExceeded { .. } => exit::CONFIG,
        SimError::StuckExecution { .. } => exit::STUCK,
        _ => exit::FAILURE,
    };
    fail(code, e)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::CONFIG } else { exit::PASS });
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Replay { script, out } => replay_script(&script, out.as_deref()),
        Command::Check { history, method } => check_file(&history, method),
        Command::Serve {
            membership,
            index,
            relay_gc,
        } => serve(&membership, index, relay_gc),
        Command::Client {
            membership,
            id,
            count,
            history,
            timeout_ms,
            retries,
        } => client(&membership, id, count, &history, timeout_ms, retries),
        Command::Bench {
            servers,
            protocols,
            json,
        } => bench(&servers, &protocols, json),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

fn parse_crash_plan(plan: &str, config: &Config, seed: u64) -> anyhow::Result<Vec<(ProcessId, u64)>> {
    if plan == "random" {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c4a5);
        let mut servers = config.servers();
        servers.shuffle(&mut rng);
        let k = rng.gen_range(0..=config.f);
        return Ok(servers.into_iter().take(k).map(|s| (s, rng.gen_range(0..400))).collect());
    }
    plan.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (server, at) = t.trim().split_once('@').unwrap_or((t.trim(), "0"));
            let server: ProcessId = server.parse()?;
            let at = at.parse().with_context(|| format!("bad step in `{t}`"))?;
            Ok((server, at))
        })
        .collect()
}

#[derive(Serialize)]
struct Verdicts {
    atomic: bool,
    witness: Option<Verdict>,
    bruteforce: Option<Verdict>,
}

fn check_history(history: &History, method: Method) -> Result<Verdicts, Failure> {
    let ops = history.operations()?.len();
    let witness = match method {
        Method::Bruteforce => None,
        _ => Some(check_witness(history)?),
    };
    let bruteforce = match method {
        Method::Witness => None,
        Method::Auto if ops > BRUTEFORCE_LIMIT => None,
        _ => Some(check_bruteforce(history)?),
    };
    let atomic = witness.iter().chain(&bruteforce).all(|v| v.atomic);
    Ok(Verdicts {
        atomic,
        witness,
        bruteforce,
    })
}

fn print_verdicts(v: &Verdicts) {
    for (name, verdict) in [("witness", &v.witness), ("bruteforce", &v.bruteforce)] {
        let Some(verdict) = verdict else { continue };
        match &verdict.violation {
            None => println!("{name}: ATOMIC"),
            Some(x) => println!(
                "{name}: NON-ATOMIC {} ({}, {}): {}",
                x.property, x.pair.0, x.pair.1, x.explanation
            ),
        }
    }
}

fn print_metrics(metrics: &Metrics) {
    for op in &metrics.per_op {
        let kind = if op.kind == ohram_core::OpKind::Read { "read" } else { "write" };
        println!(
            "{} {kind} messages={} exchanges={}{}",
            op.op_id,
            op.total_messages,
            op.exchanges,
            if op.completed { "" } else { " (pending)" }
        );
    }
    let range = |lo: u64, hi: u64| if lo == hi { lo.to_string() } else { format!("{lo}-{hi}") };
    if let Some(r) = &metrics.aggregate.reads {
        println!("read_msgs={}", range(r.min_messages, r.max_messages));
    }
    if let Some(w) = &metrics.aggregate.writes {
        println!("write_msgs={}", range(w.min_messages, w.max_messages));
    }
    println!("total_msgs={}", metrics.aggregate.total_messages);
}

fn write_outputs(dir: &Path, outcome: &RunOutcome, verdicts: &Verdicts) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("history.jsonl"), outcome.history.to_jsonl())?;
    fs::write(dir.join("metrics.json"), outcome.metrics.to_json())?;
    fs::write(
        dir.join("invariants.json"),
        serde_json::to_string_pretty(&outcome.invariants)? + "\n",
    )?;
    fs::write(dir.join("verdict.json"), serde_json::to_string_pretty(verdicts)? + "\n")?;
    Ok(())
}

fn report(outcome: &RunOutcome, out: Option<&Path>) -> Result<u8, Failure> {
    let verdicts = check_history(&outcome.history, Method::Auto)?;
    print_metrics(&outcome.metrics);
    for v in &outcome.invariants.violations {
        println!("invariant {:?} at step {} on {}: {}", v.kind, v.step, v.server, v.detail);
    }
    print_verdicts(&verdicts);
    if let Some(dir) = out {
        write_outputs(dir, outcome, &verdicts)?;
    }
    Ok(if verdicts.atomic && outcome.invariants.is_clean() {
        exit::PASS
    } else {
        exit::NON_ATOMIC
    })
}

fn simulate(args: SimulateArgs) -> Result<u8, Failure> {
    let config = Config::new(args.servers, args.readers, args.writers, args.f);
    ohram_core::validate_config(&config, args.protocol.mode()).map_err(|e| fail(exit::CONFIG, e))?;
    let workload = match args.ops {
        Some(w) => w,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            Workload::random(&mut rng, &config, args.protocol.mode(), 10)
        }
    };
    let mut schedule = Schedule::seeded(args.seed);
    if let Some(plan) = &args.crash_plan {
        for (server, at) in parse_crash_plan(plan, &config, args.seed).map_err(|e| fail(exit::CONFIG, e))? {
            schedule = schedule.with_crash(server, at);
        }
    }
    let options = SimOptions {
        protocol: ProtocolOptions {
            naive_threshold: args.naive_threshold,
            ..ProtocolOptions::default()
        },
        ..SimOptions::default()
    };
    let outcome = run(&config, args.protocol, &workload, &schedule, &options).map_err(sim_failure)?;
    report(&outcome, args.out.as_deref())
}

fn replay_script(path: &Path, out: Option<&Path>) -> Result<u8, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let script = Script::from_jsonl(&text)?;
    let outcome = replay(&script).map_err(sim_failure)?;
    report(&outcome, out)
}

fn check_file(path: &Path, method: Method) -> Result<u8, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let history = History::from_jsonl(&text)?;
    let verdicts = check_history(&history, method)?;
    println!("{}", serde_json::to_string(&verdicts)?);
    Ok(if verdicts.atomic { exit::PASS } else { exit::NON_ATOMIC })
}

fn load_membership(path: &Path) -> Result<Membership, Failure> {
    Membership::load(path).map_err(|e| match e {
        NetError::Membership(_) => fail(exit::CONFIG, e),
        other => fail(exit::FAILURE, other),
    })
}

fn serve(membership: &Path, index: u32, gc: GcArg) -> Result<u8, Failure> {
    let membership = load_membership(membership)?;
    let options = ProtocolOptions {
        relay_gc: match gc {
            GcArg::UntilNextOp => RelayGc::UntilNextOp,
            GcArg::Disabled => RelayGc::Disabled,
        },
        ..ProtocolOptions::default()
    };
    let handle = ohram_net::serve(&membership, index, options)?;
    eprintln!("{} serving on {}", handle.id(), handle.addr());
    handle.wait();
    Ok(exit::PASS)
}

fn client(membership: &Path, id: ProcessId, count: usize, out: &Path, timeout_ms: u64, retries: u32) -> Result<u8, Failure> {
    let membership = load_membership(membership)?;
    let options = ClientOptions {
        attempt_timeout: Duration::from_millis(timeout_ms),
        retries,
    };
    let mut client = Client::new(&membership, id, Clock::System, options).map_err(|e| fail(exit::CONFIG, e))?;
    let mut result = Ok(());
    for i in 0..count {
        let step = if id.role == ohram_core::Role::Writer {
            client.write(format!("{id}-{}", i + 1))
        } else {
            client.read()
        };
        match step {
            Ok(tv) => println!("{} -> {} {}", id, tv.tag, tv.value),
            Err(e) => {
                result = Err(e);
                break;
            }
        }
    }
    fs::write(out, client.history().to_jsonl()).with_context(|| format!("writing {}", out.display()))?;
    result?;
    Ok(exit::PASS)
}

#[derive(Serialize)]
struct BenchRow {
    protocol: Protocol,
    servers: usize,
    read: Cost,
    write: Cost,
    expected_read: Cost,
    expected_write: Cost,
    pass: bool,
}

fn bench(servers: &[usize], protocols: &[String], json: bool) -> Result<u8, Failure> {
    let protocols = protocols
        .iter()
        .map(|p| p.parse::<Protocol>().map_err(|e| fail(exit::CONFIG, anyhow!(e))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for &protocol in &protocols {
        for &n in servers {
            if n == 0 {
                return Err(fail(exit::CONFIG, anyhow!("server count must be positive")));
            }
            let writers = if protocol.mode() == ohram_core::Mode::Swmr { 1 } else { 2 };
            let config = Config::new(n, 1, writers, 0);
            let workload: Workload = "w1,r1".parse().expect("static workload");
            let out = run(&config, protocol, &workload, &Schedule::seeded(0), &SimOptions::default()).map_err(sim_failure)?;
            let write = Cost::of(&out.metrics.per_op[0]);
            let read = Cost::of(&out.metrics.per_op[1]);
            let (expected_read, expected_write) = expected_costs(protocol, n);
            rows.push(BenchRow {
                protocol,
                servers: n,
                read,
                write,
                expected_read,
                expected_write,
                pass: read == expected_read && write == expected_write,
            });
        }
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        println!(
            "{:<10} {:>3}  {:>14}  {:>14}  {:>14}  {:>14}  result",
            "protocol", "|S|", "read (ex,msg)", "write (ex,msg)", "expected read", "expected write"
        );
        let cell = |c: Cost| format!("({},{})", c.exchanges, c.messages);
        for r in &rows {
            println!(
                "{:<10} {:>3}  {:>14}  {:>14}  {:>14}  {:>14}  {}",
                r.protocol.name(),
                r.servers,
                cell(r.read),
                cell(r.write),
                cell(r.expected_read),
                cell(r.expected_write),
                if r.pass { "PASS" } else { "FAIL" }
            );
        }
    }
    if rows.iter().all(|r| r.pass) {
        Ok(exit::PASS)
    } else {
        Err(fail(exit::NON_ATOMIC, anyhow!("measured costs differ from the closed forms")))
    }
}
