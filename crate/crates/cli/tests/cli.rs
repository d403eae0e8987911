use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Stdio};

const CORRIDOR: &str = r#"
horizon = 30

[task]
width = 7
height = 1
blocked = []
start = [3, 0]
goals = [
    { id = "L", cell = [0, 0], reward = 10.0 },
    { id = "R", cell = [6, 0], reward = 11.0 },
]

[solver]
belief_points = 80
"#;

fn mutadapt(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_mutadapt"))
        .args(["--config", dir.join("run.toml").to_str().unwrap()])
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), CORRIDOR).unwrap();
    dir
}

#[test]
fn inspect_reports_the_configured_task() {
    let dir = workspace();
    let out = mutadapt(dir.path(), &["inspect"]);
    assert!(out.contains("states: 11 observable x 10 hidden = 110"), "{out}");
}

#[test]
fn solved_policies_drive_simulate_and_trace() {
    let dir = workspace();
    mutadapt(dir.path(), &["solve", "--out", "mutual.policy"]);
    let text = std::fs::read_to_string(dir.path().join("mutual.policy")).unwrap();
    assert!(text.starts_with("# mutadapt policy v1"));

    mutadapt(dir.path(), &["simulate", "--policy", "mutual.policy", "--alpha", "0,1", "--runs", "20", "--seed", "4", "--out", "runs.csv"]);
    let csv = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("alpha,run,goal,reward,steps"));
    assert_eq!(lines.count(), 40);
    // Solving again gives the same rows as loading.
    let again = mutadapt(dir.path(), &["simulate", "--alpha", "0,1", "--runs", "20", "--seed", "4"]);
    assert_eq!(again, csv);

    let trace: serde_json::Value = serde_json::from_str(&mutadapt(dir.path(), &["trace", "--alpha", "0.5", "--seed", "1"])).unwrap();
    assert_eq!(trace["condition"], "mutual");
    assert!(trace["steps"].as_array().is_some_and(|s| !s.is_empty()));
}

#[test]
fn one_way_artifacts_cannot_pose_as_mutual() {
    let dir = workspace();
    mutadapt(dir.path(), &["solve", "--condition", "oneway", "--out", "ow.policy"]);
    let out = Command::new(env!("CARGO_BIN_EXE_mutadapt"))
        .args(["--config", "run.toml", "simulate", "--policy", "ow.policy", "--runs", "2"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn sweep_writes_curves_for_every_condition() {
    let dir = workspace();
    mutadapt(dir.path(), &["sweep", "--runs", "30", "--out-dir", "out"]);
    for c in ["none", "oneway", "mutual"] {
        let curve = std::fs::read_to_string(dir.path().join(format!("out/curve_{c}.csv"))).unwrap();
        assert_eq!(curve.lines().count(), 6, "{curve}");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["none"]["population"]["mean"], 11.0);
}

fn post(addr: &str, body: &str) -> serde_json::Value {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "POST /api HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len()).unwrap();
    let mut reply = String::new();
    s.read_to_string(&mut reply).unwrap();
    let (head, payload) = reply.split_once("\r\n\r\n").unwrap();
    assert!(head.starts_with("HTTP/1.1 200"), "{head}");
    serde_json::from_str(payload).unwrap()
}

#[test]
fn server_answers_protocol_messages() {
    let dir = workspace();
    let mut child = Command::new(env!("CARGO_BIN_EXE_mutadapt"))
        .args(["--config", "run.toml", "serve", "--bind", "127.0.0.1:0"])
        .current_dir(dir.path())
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_owned();

    let created = post(&addr, r#"{"v":1,"type":"create","condition":"mutual","seed":3}"#);
    assert_eq!(created["type"], "state");
    assert_eq!(created["x"], serde_json::json!([3, 0]));
    let id = created["session"].as_str().unwrap();
    let stepped = post(&addr, &format!(r#"{{"v":1,"type":"step","session":"{id}","input":"left"}}"#));
    assert_eq!(stepped["step"], 1);
    let bad = post(&addr, r#"{"v":1,"type":"create","condition":"sideways"}"#);
    assert_eq!((bad["type"].as_str(), bad["code"].as_str()), (Some("error"), Some("unknown_condition")));
    child.kill().unwrap();
    child.wait().unwrap();
}
