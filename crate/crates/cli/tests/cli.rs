use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ohram(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ohram")).args(args).output().unwrap()
}

fn script(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schedules").join(format!("{name}.json"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn simulate_reports_costs_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = ohram(&[
        "simulate", "--protocol", "ohsam", "--servers", "5", "--f", "2", "--ops", "w1,r1",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("read_msgs=35"), "{text}");
    assert!(text.contains("write_msgs=10"), "{text}");
    for file in ["history.jsonl", "metrics.json", "invariants.json", "verdict.json"] {
        assert!(out_dir.join(file).is_file(), "{file}");
    }
    let check = ohram(&["check", out_dir.join("history.jsonl").to_str().unwrap()]);
    assert_eq!(check.status.code(), Some(0));
}

#[test]
fn invalid_fault_bound_is_a_config_error() {
    let out = ohram(&["simulate", "--protocol", "ohsam", "--servers", "4", "--f", "2"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn too_many_crashes_is_a_config_error() {
    let out = ohram(&[
        "simulate", "--protocol", "abd-swmr", "--servers", "3", "--f", "1", "--crash-plan", "s1@0,s2@3",
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn bad_arguments_are_config_errors() {
    assert_eq!(ohram(&["simulate", "--protocol", "paxos", "--servers", "3"]).status.code(), Some(4));
    assert_eq!(ohram(&["--help"]).status.code(), Some(0));
}

#[test]
fn xi4_replay_is_non_atomic() {
    let out = ohram(&["replay", script("xi4").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("bruteforce: NON-ATOMIC"));
}

#[test]
fn xi1p_replay_is_atomic() {
    assert_eq!(ohram(&["replay", script("xi1p").to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn check_rejects_a_hand_written_violation() {
    let dir = tempfile::tempdir().unwrap();
    let history = ohram_core::testkit::violation_fixtures().remove(0).history;
    let path = dir.path().join("bad.jsonl");
    fs::write(&path, history.to_jsonl()).unwrap();
    let out = ohram(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("\"atomic\":false"));
}

#[test]
fn bench_grid_passes() {
    let out = ohram(&["bench", "--servers", "3,5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert_eq!(stdout(&out).matches("PASS").count(), 8);
}

#[test]
fn live_daemons_and_clients_via_the_binary() {
    use std::net::TcpListener;
    use std::process::Stdio;
    use std::thread::sleep;
    use std::time::Duration;

    let dir = tempfile::tempdir().unwrap();
    let ports: Vec<u16> = (0..3)
        .map(|_| TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port())
        .collect();
    let membership = dir.path().join("members.json");
    let servers: Vec<String> = ports.iter().map(|p| format!("\"127.0.0.1:{p}\"")).collect();
    fs::write(
        &membership,
        format!("{{\"protocol\":\"ohsam\",\"servers\":[{}]}}", servers.join(",")),
    )
    .unwrap();
    let mut daemons: Vec<_> = (1..=3)
        .map(|i| {
            Command::new(env!("CARGO_BIN_EXE_ohram"))
                .args(["serve", "--membership", membership.to_str().unwrap(), "--index", &i.to_string()])
                .stderr(Stdio::null())
                .spawn()
                .unwrap()
        })
        .collect();
    sleep(Duration::from_millis(200));
    let run = |id: &str| {
        let h = dir.path().join(format!("{id}.jsonl"));
        let out = ohram(&[
            "client", "--membership", membership.to_str().unwrap(), "--id", id, "--count", "2",
            "--history", h.to_str().unwrap(),
        ]);
        (out, h)
    };
    let (w, wh) = run("w1");
    let (r, rh) = run("r1");
    for d in &mut daemons {
        let _ = d.kill();
        let _ = d.wait();
    }
    assert_eq!(w.status.code(), Some(0), "{}", String::from_utf8_lossy(&w.stderr));
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(stdout(&r).contains("w1-2"), "{}", stdout(&r));
    let merged = dir.path().join("merged.jsonl");
    let text = fs::read_to_string(wh).unwrap() + &fs::read_to_string(rh).unwrap();
    fs::write(&merged, text).unwrap();
    assert_eq!(ohram(&["check", merged.to_str().unwrap()]).status.code(), Some(0));
}
